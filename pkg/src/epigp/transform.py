"""Case-count preprocessing: trailing smoothing, lagged log-differences, trends.

Day indexing: the first smoothed day is index 1, so a lag-``eta`` delta
series starts at index ``eta + 1``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError
from .gp import TrainSet, frozen_array

__all__ = [
    "CaseSeries",
    "SmoothedSeries",
    "DeltaSeries",
    "Trend",
    "rolling_average",
    "log_difference",
    "classify_trend",
    "reconstruct_cases",
    "forward_fill",
]

ONE_DAY = np.timedelta64(1, "D")


def _dates(values) -> np.ndarray:
    arr = np.array(values, dtype="datetime64[D]").reshape(-1)
    arr.setflags(write=False)
    return arr


def _check_daily(dates: np.ndarray) -> None:
    if dates.size > 1:
        steps = np.diff(dates)
        if np.any(steps <= np.timedelta64(0, "D")):
            bad = int(np.argmax(steps <= np.timedelta64(0, "D"))) + 1
            raise DataError(f"dates must be strictly increasing (position {bad}: {dates[bad]})")
        if np.any(steps != ONE_DAY):
            bad = int(np.argmax(steps != ONE_DAY))
            raise DataError(f"missing calendar days after {dates[bad]}")


@dataclass(frozen=True, eq=False)
class CaseSeries:
    """Daily observed cases (e.g. per million) on consecutive calendar days."""

    dates: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        dates = _dates(self.dates)
        values = frozen_array(self.values)
        if dates.shape != values.shape:
            raise DataError("dates and values differ in length")
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise DataError("case values must be finite and strictly positive")
        _check_daily(dates)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return int(self.values.size)

    def shifted(self, days: int) -> "CaseSeries":
        return CaseSeries(self.dates + np.timedelta64(days, "D"), self.values)


@dataclass(frozen=True, eq=False)
class SmoothedSeries:
    window: int
    dates: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dates", _dates(self.dates))
        object.__setattr__(self, "values", frozen_array(self.values))

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def times(self) -> np.ndarray:
        return np.arange(1, len(self) + 1)


@dataclass(frozen=True, eq=False)
class DeltaSeries:
    """Lag-``lag`` log-differences indexed by integer day ``times``."""

    lag: int
    times: np.ndarray
    deltas: np.ndarray
    dates: np.ndarray = field(default_factory=lambda: _dates([]))

    def __post_init__(self):
        times = frozen_array(self.times, dtype=np.int64)
        deltas = frozen_array(self.deltas)
        dates = _dates(self.dates)
        if times.shape != deltas.shape:
            raise DataError("times and deltas differ in length")
        if dates.size and dates.shape != times.shape:
            raise DataError("dates and deltas differ in length")
        if not np.all(np.isfinite(deltas)):
            raise DataError("delta values must be finite")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "deltas", deltas)
        object.__setattr__(self, "dates", dates)

    def __len__(self) -> int:
        return int(self.deltas.size)

    def slice(self, start: int, stop: int) -> "DeltaSeries":
        dates = self.dates[start:stop] if self.dates.size else self.dates
        return DeltaSeries(self.lag, self.times[start:stop], self.deltas[start:stop], dates)

    def as_train_set(self) -> TrainSet:
        return TrainSet(self.times.astype(float), self.deltas)


class Trend(str, enum.Enum):
    INCREASING = "increasing"
    DECREASING = "decreasing"
    FLAT = "flat"


def forward_fill(dates, values) -> tuple[np.ndarray, np.ndarray]:
    """Insert missing calendar days, carrying the last observed value forward."""
    dates = np.array(dates, dtype="datetime64[D]")
    values = np.asarray(values, dtype=float)
    if dates.size == 0:
        return dates, values
    if np.any(np.diff(dates) <= np.timedelta64(0, "D")):
        raise DataError("dates must be strictly increasing before filling")
    full = np.arange(dates[0], dates[-1] + ONE_DAY, dtype="datetime64[D]")
    pos = np.searchsorted(dates, full, side="right") - 1
    return full, values[pos]


def rolling_average(series: CaseSeries, window: int) -> SmoothedSeries:
    """Trailing mean over days ``t - window + 1 .. t``; the first ``window - 1`` days are dropped."""
    window = int(window)
    if window < 1:
        raise DataError("smoothing window must be a positive integer")
    if len(series) < window:
        raise DataError("insufficient data for window")
    if window == 1:
        means = series.values.copy()
    else:
        means = sliding_window_view(series.values, window).mean(axis=1)
    return SmoothedSeries(window=window, dates=series.dates[window - 1 :], values=means)


def log_difference(series: SmoothedSeries, lag: int) -> DeltaSeries:
    """``log(I(t)) - log(I(t - lag))`` for every day with both values available."""
    lag = int(lag)
    if lag < 1:
        raise DataError("lag must be a positive integer")
    values = np.asarray(series.values, dtype=float)
    if values.size <= lag:
        raise DataError(f"series of length {values.size} too short for lag {lag}")
    if np.any(values <= 0) or not np.all(np.isfinite(values)):
        raise DataError("log-difference requires positive cases")
    logs = np.log(values)
    times = np.arange(lag + 1, values.size + 1)
    return DeltaSeries(lag=lag, times=times, deltas=logs[lag:] - logs[:-lag], dates=series.dates[lag:])


def classify_trend(delta: float, tol: float = 0.0) -> Trend:
    if tol < 0:
        raise DataError("tolerance must be non-negative")
    if delta > tol:
        return Trend.INCREASING
    if delta < -tol:
        return Trend.DECREASING
    return Trend.FLAT


def reconstruct_cases(anchor, deltas, lag: int) -> np.ndarray:
    """Project case levels forward from predicted deltas.

    ``I(t) = I(t - lag) * exp(delta(t))``, chained recursively so horizons
    longer than ``lag`` reuse earlier projections.  ``anchor`` holds the
    smoothed values immediately preceding the first forecast day (at least
    ``lag`` of them; only the last ``lag`` are used).
    """
    lag = int(lag)
    if lag < 1:
        raise DataError("lag must be a positive integer")
    base = np.asarray(getattr(anchor, "values", anchor), dtype=float).reshape(-1)
    steps = np.asarray(getattr(deltas, "deltas", deltas), dtype=float).reshape(-1)
    if base.size < lag:
        raise DataError(f"anchor needs at least {lag} values, got {base.size}")
    if np.any(base <= 0):
        raise DataError("anchor values must be positive")
    out = np.empty(lag + steps.size)
    out[:lag] = base[-lag:]
    for i, d in enumerate(steps):
        out[lag + i] = out[i] * math.exp(d)
    return out[lag:]
