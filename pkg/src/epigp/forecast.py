"""Moving-window train/predict harness, interval scoring and sensitivity sweeps."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, Union

import numpy as np
from scipy import stats

from .errors import DataError, EpiGPError
from .gp import KernelParams, NoiseModel, TrainSet, frozen_array, hyperparameter_grid, posterior, select_hyperparameters
from .transform import CaseSeries, DeltaSeries, log_difference, rolling_average

__all__ = [
    "WindowSpec",
    "ForecastRecord",
    "Metrics",
    "SweepRow",
    "HyperparameterPolicy",
    "normal_quantile",
    "window_slices",
    "run_moving_window",
    "fit_in_sample",
    "coverage",
    "mse",
    "evaluate",
    "sensitivity_sweep",
]

HyperparameterPolicy = Union[KernelParams, Sequence[KernelParams], None]
MODES = ("observation", "latent")


def normal_quantile(level: float) -> float:
    """Two-sided standard-normal quantile, e.g. 1.959964 for ``level=0.95``."""
    if not 0.0 < level < 1.0:
        raise DataError(f"interval level must lie in (0, 1), got {level}")
    return float(stats.norm.ppf(0.5 + 0.5 * level))


def _quantile(level: float, dof: int | None) -> float:
    if dof is None:
        return normal_quantile(level)
    if dof <= 0:
        return math.inf
    return float(stats.t.ppf(0.5 + 0.5 * level, dof))


@dataclass(frozen=True)
class WindowSpec:
    train_length: int = 30
    horizon: int = 20
    stride: int | None = None

    def __post_init__(self):
        stride = self.horizon if self.stride is None else self.stride
        object.__setattr__(self, "stride", int(stride))
        if min(self.train_length, self.horizon, self.stride) < 1:
            raise DataError("train_length, horizon and stride must be positive")

    def to_dict(self) -> dict:
        return {"train_length": self.train_length, "horizon": self.horizon, "stride": self.stride}


@dataclass(frozen=True, eq=False)
class ForecastRecord:
    """One train/test window.

    ``predicted_variance`` is the predictive variance of the latent value;
    the observation interval adds ``noise_variance``.  Baselines store their
    own predictive variance with ``noise_variance = 0`` and, for Student-t
    intervals, the residual degrees of freedom in ``dof``.
    """

    window_index: int
    method: str
    train_times: np.ndarray
    test_times: np.ndarray
    predicted_mean: np.ndarray
    predicted_variance: np.ndarray
    actuals: np.ndarray
    noise_variance: float = 0.0
    interval_level: float = 0.95
    dof: int | None = None
    partial: bool = False
    params: KernelParams | None = None
    test_dates: tuple = ()

    def __post_init__(self):
        for name in ("train_times", "test_times", "predicted_mean", "predicted_variance", "actuals"):
            object.__setattr__(self, name, frozen_array(getattr(self, name)))
        object.__setattr__(self, "test_dates", tuple(str(d) for d in self.test_dates))
        n = self.test_times.size
        if not (self.predicted_mean.size == self.predicted_variance.size == self.actuals.size == n):
            raise DataError("record arrays must match the number of test times")

    def _interval(self, extra: float, level: float | None):
        q = _quantile(self.interval_level if level is None else level, self.dof)
        if math.isinf(q):
            half = np.full(self.predicted_mean.shape, math.inf)
        else:
            half = q * np.sqrt(self.predicted_variance + extra)
        return self.predicted_mean - half, self.predicted_mean + half

    def latent_interval(self, level: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        return self._interval(0.0, level)

    def observation_interval(self, level: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        return self._interval(self.noise_variance, level)

    def interval(self, mode: str = "observation", level: float | None = None):
        if mode == "observation":
            return self.observation_interval(level)
        if mode == "latent":
            return self.latent_interval(level)
        raise DataError(f"unknown interval mode {mode!r}")

    def to_dict(self) -> dict:
        lat = self.latent_interval()
        obs = self.observation_interval()
        return {
            "window_index": self.window_index,
            "method": self.method,
            "train_times": self.train_times.tolist(),
            "test_times": self.test_times.tolist(),
            "test_dates": list(self.test_dates),
            "predicted_mean": self.predicted_mean.tolist(),
            "predicted_variance": self.predicted_variance.tolist(),
            "noise_variance": self.noise_variance,
            "interval_level": self.interval_level,
            "dof": self.dof,
            "latent_interval": {"lower": lat[0].tolist(), "upper": lat[1].tolist()},
            "observation_interval": {"lower": obs[0].tolist(), "upper": obs[1].tolist()},
            "actuals": self.actuals.tolist(),
            "partial": self.partial,
            "params": None if self.params is None else self.params.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ForecastRecord":
        params = data.get("params")
        return cls(
            window_index=int(data["window_index"]),
            method=data["method"],
            train_times=data["train_times"],
            test_times=data["test_times"],
            predicted_mean=data["predicted_mean"],
            predicted_variance=data["predicted_variance"],
            actuals=data["actuals"],
            noise_variance=float(data["noise_variance"]),
            interval_level=float(data["interval_level"]),
            dof=data.get("dof"),
            partial=bool(data.get("partial", False)),
            params=None if params is None else KernelParams(**params),
            test_dates=tuple(data.get("test_dates", ())),
        )


@dataclass(frozen=True)
class Metrics:
    method: str
    mse: float
    coverage: float
    per_window: tuple = ()
    test_times: tuple = field(default=(), repr=False)
    mode: str = "observation"
    level: float = 0.95

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "mse": self.mse,
            "coverage": self.coverage,
            "mode": self.mode,
            "level": self.level,
            "points": len(self.test_times),
            "per_window": [
                {"window_index": w, "mse": m, "coverage": c} for w, m, c in self.per_window
            ],
        }


def _hits(record: ForecastRecord, level: float | None, mode: str) -> np.ndarray:
    lo, hi = record.interval(mode, level)
    return (record.actuals >= lo) & (record.actuals <= hi)


def coverage(records: Sequence[ForecastRecord], level: float | None = None, mode: str = "observation") -> float:
    """Fraction of test points whose actual value lies inside the interval.

    ``level=None`` uses each record's own ``interval_level``.
    """
    if not records:
        raise DataError("no forecast records")
    hits = np.concatenate([_hits(r, level, mode) for r in records])
    return float(hits.mean()) if hits.size else 0.0


def mse(records: Sequence[ForecastRecord]) -> float:
    if not records:
        raise DataError("no forecast records")
    err = np.concatenate([r.actuals - r.predicted_mean for r in records])
    return float(np.mean(err * err)) if err.size else 0.0


def evaluate(records: Sequence[ForecastRecord], level: float | None = None, mode: str = "observation") -> Metrics:
    if not records:
        raise DataError("no forecast records")
    per_window = tuple(
        (r.window_index, mse([r]), coverage([r], level, mode)) for r in records
    )
    times = tuple(float(t) for r in records for t in r.test_times)
    return Metrics(
        method=records[0].method,
        mse=mse(records),
        coverage=coverage(records, level, mode),
        per_window=per_window,
        test_times=times,
        mode=mode,
        level=records[0].interval_level if level is None else level,
    )


def window_slices(n: int, spec: WindowSpec) -> list[tuple[int, slice, slice, bool]]:
    """``(index, train, test, partial)`` for every window that has a test point."""
    if n < spec.train_length + spec.horizon:
        raise DataError(
            f"series of length {n} is shorter than train_length + horizon "
            f"({spec.train_length + spec.horizon})"
        )
    out = []
    for i, start in enumerate(range(0, n - spec.train_length, spec.stride)):
        split = start + spec.train_length
        stop = min(split + spec.horizon, n)
        out.append((i, slice(start, split), slice(split, stop), stop - split < spec.horizon))
    return out


def _chooser(policy: HyperparameterPolicy, noise: NoiseModel) -> Callable[[TrainSet], KernelParams]:
    if isinstance(policy, KernelParams):
        return lambda train: policy
    grid = hyperparameter_grid() if policy is None else list(policy)
    return lambda train: select_hyperparameters(train, noise, grid)


def _gp_record(index, deltas, train_sl, test_sl, params, noise, level, partial) -> ForecastRecord:
    train = deltas.slice(train_sl.start, train_sl.stop).as_train_set()
    test_times = deltas.times[test_sl].astype(float)
    post = posterior(params, noise, train, test_times)
    dates = deltas.dates[test_sl] if deltas.dates.size else ()
    return ForecastRecord(
        window_index=index,
        method="gpr",
        train_times=train.times,
        test_times=test_times,
        predicted_mean=post.mean,
        predicted_variance=post.variance,
        actuals=deltas.deltas[test_sl],
        noise_variance=noise.variance,
        interval_level=level,
        partial=partial,
        params=params,
        test_dates=tuple(str(d) for d in dates),
    )


def run_moving_window(
    deltas: DeltaSeries,
    spec: WindowSpec = WindowSpec(),
    hp_policy: HyperparameterPolicy = None,
    noise: NoiseModel = NoiseModel(),
    level: float = 0.95,
    freeze_hp: bool = False,
    workers: int | None = None,
) -> list[ForecastRecord]:
    """Train on ``spec.train_length`` consecutive deltas, predict the next ``spec.horizon``.

    Windows advance by ``spec.stride``.  ``hp_policy`` is either fixed
    ``KernelParams`` or a grid (``None`` means the default grid) searched
    per window, or once on the first window when ``freeze_hp`` is set.  A
    trailing window with fewer than ``horizon`` test points is kept and
    flagged ``partial``.
    """
    normal_quantile(level)
    slices = window_slices(len(deltas), spec)
    choose = _chooser(hp_policy, noise)
    frozen = None
    if freeze_hp and not isinstance(hp_policy, KernelParams):
        first = slices[0][1]
        frozen = choose(deltas.slice(first.start, first.stop).as_train_set())

    def one(item):
        index, train_sl, test_sl, partial = item
        if frozen is not None:
            params = frozen
        else:
            params = choose(deltas.slice(train_sl.start, train_sl.stop).as_train_set())
        return _gp_record(index, deltas, train_sl, test_sl, params, noise, level, partial)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(one, slices))
    else:
        records = [one(s) for s in slices]
    return sorted(records, key=lambda r: r.window_index)


def fit_in_sample(
    deltas: DeltaSeries,
    hp_policy: HyperparameterPolicy = None,
    noise: NoiseModel = NoiseModel(),
    level: float = 0.95,
) -> ForecastRecord:
    """Condition on the whole series and predict back at the training times."""
    normal_quantile(level)
    n = len(deltas)
    everything = slice(0, n)
    params = _chooser(hp_policy, noise)(deltas.as_train_set())
    return _gp_record(0, deltas, everything, everything, params, noise, level, False)


@dataclass(frozen=True)
class SweepRow:
    window: int
    lag: int
    coverage: float | None
    mse: float | None
    points: int = 0
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "window": self.window,
            "lag": self.lag,
            "coverage": self.coverage,
            "mse": self.mse,
            "points": self.points,
            "error": self.error,
        }


def sensitivity_sweep(
    raw: CaseSeries,
    windows: Iterable[int],
    lags: Iterable[int],
    spec: WindowSpec = WindowSpec(),
    noise: NoiseModel = NoiseModel(),
    hp_policy: HyperparameterPolicy = None,
    level: float = 0.95,
    mode: str = "observation",
    protocol: str = "predict",
    freeze_hp: bool = False,
) -> list[SweepRow]:
    """Score every (smoothing window, lag) pair; rows are ordered by ``(window, lag)``.

    ``protocol="predict"`` uses the moving-window forecast, ``"fit"`` the
    in-sample fit.  A failing cell records its error and the sweep goes on.
    """
    if protocol not in ("predict", "fit"):
        raise DataError(f"unknown protocol {protocol!r}")
    rows = []
    for w in sorted(set(int(x) for x in windows)):
        for lag in sorted(set(int(x) for x in lags)):
            try:
                deltas = log_difference(rolling_average(raw, w), lag)
                if protocol == "predict":
                    records = run_moving_window(deltas, spec, hp_policy, noise, level, freeze_hp)
                else:
                    records = [fit_in_sample(deltas, hp_policy, noise, level)]
                m = evaluate(records, level, mode)
                rows.append(SweepRow(w, lag, m.coverage, m.mse, len(m.test_times)))
            except EpiGPError as exc:
                rows.append(SweepRow(w, lag, None, None, 0, f"{type(exc).__name__}: {exc}"))
    return rows
