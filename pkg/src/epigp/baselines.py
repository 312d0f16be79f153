"""Polynomial least-squares and k-nearest-neighbour baselines.

Interval definitions used here:

* polynomial: OLS prediction interval
  ``yhat +- t_{n-d-1} * sqrt(s^2 (1 + h(t*)))`` with leverage ``h``;
* KNN: ``mean +- z * std`` of the ``kappa`` neighbour targets (sample std,
  zero width for ``kappa = 1``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DataError
from .forecast import ForecastRecord, Metrics, WindowSpec, _quantile, window_slices
from .gp import TrainSet, frozen_array
from .transform import DeltaSeries

__all__ = [
    "PolyModel",
    "KnnModel",
    "PredictionBand",
    "ComparisonRow",
    "poly_fit",
    "poly_predict",
    "knn_fit",
    "knn_predict",
    "run_baseline_windows",
    "fit_baseline_in_sample",
    "compare",
]


@dataclass(frozen=True, eq=False)
class PredictionBand:
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    variance: np.ndarray
    dof: int | None = None


@dataclass(frozen=True, eq=False)
class PolyModel:
    """OLS polynomial in the standardized input ``u = (t - center) / half_width``."""

    degree: int
    coefficients: np.ndarray
    residual_variance: float
    design_gram_inverse: np.ndarray
    center: float
    half_width: float
    n: int

    @property
    def dof(self) -> int:
        return self.n - self.degree - 1

    def design(self, times) -> np.ndarray:
        u = (np.asarray(times, dtype=float) - self.center) / self.half_width
        return np.vander(u, self.degree + 1, increasing=True)


@dataclass(frozen=True, eq=False)
class KnnModel:
    kappa: int
    train_times: np.ndarray
    train_targets: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "train_times", frozen_array(self.train_times))
        object.__setattr__(self, "train_targets", frozen_array(self.train_targets))
        if self.train_times.size == 0:
            raise DataError("empty training set")
        if not 1 <= self.kappa <= self.train_times.size:
            raise DataError(f"kappa must lie in [1, {self.train_times.size}], got {self.kappa}")


def poly_fit(train: TrainSet, degree: int) -> PolyModel:
    degree = int(degree)
    if degree < 0:
        raise DataError("degree must be non-negative")
    n = train.count
    if n < degree + 1:
        raise DataError(f"need at least {degree + 1} points for degree {degree}, got {n}")
    lo, hi = float(train.times[0]), float(train.times[-1])
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) or 1.0
    u = (train.times - center) / half
    X = np.vander(u, degree + 1, increasing=True)
    Q, R = np.linalg.qr(X)
    diag = np.abs(np.diag(R))
    if diag.min() <= diag.max() * max(X.shape) * np.finfo(float).eps:
        raise DataError("degenerate polynomial basis")
    coef = linalg.solve_triangular(R, Q.T @ train.targets)
    Rinv = linalg.solve_triangular(R, np.eye(degree + 1))
    resid = train.targets - X @ coef
    dof = n - degree - 1
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    return PolyModel(
        degree=degree,
        coefficients=frozen_array(coef),
        residual_variance=s2,
        design_gram_inverse=Rinv @ Rinv.T,
        center=center,
        half_width=half,
        n=n,
    )


def poly_predict(model: PolyModel, test_times, level: float = 0.95) -> PredictionBand:
    X = model.design(test_times)
    mean = X @ model.coefficients
    leverage = np.einsum("ij,jk,ik->i", X, model.design_gram_inverse, X)
    variance = model.residual_variance * (1.0 + leverage)
    q = _quantile(level, model.dof)
    half = np.full_like(mean, np.inf) if np.isinf(q) else q * np.sqrt(variance)
    return PredictionBand(mean, mean - half, mean + half, variance, model.dof)


def knn_fit(train: TrainSet, kappa: int) -> KnnModel:
    return KnnModel(int(kappa), train.times, train.targets)


def knn_predict(model: KnnModel, test_times, level: float = 0.95) -> PredictionBand:
    """Average of the ``kappa`` nearest targets; distance ties go to the earlier time."""
    test_times = np.asarray(test_times, dtype=float).reshape(-1)
    means = np.empty(test_times.size)
    variances = np.empty(test_times.size)
    for i, t in enumerate(test_times):
        dist = np.abs(model.train_times - t)
        nearest = np.lexsort((model.train_times, dist))[: model.kappa]
        values = model.train_targets[nearest]
        means[i] = values.mean()
        variances[i] = values.var(ddof=1) if model.kappa > 1 else 0.0
    half = _quantile(level, None) * np.sqrt(variances)
    return PredictionBand(means, means - half, means + half, variances, None)


def _predict(method: str, train: TrainSet, test_times, order: int, level: float) -> PredictionBand:
    if method == "poly":
        return poly_predict(poly_fit(train, order), test_times, level)
    if method == "knn":
        return knn_predict(knn_fit(train, order), test_times, level)
    raise DataError(f"unknown baseline {method!r}")


def _record(index, method, order, deltas, train_sl, test_sl, level, partial) -> ForecastRecord:
    train = deltas.slice(train_sl.start, train_sl.stop).as_train_set()
    test_times = deltas.times[test_sl].astype(float)
    band = _predict(method, train, test_times, order, level)
    dates = deltas.dates[test_sl] if deltas.dates.size else ()
    return ForecastRecord(
        window_index=index,
        method=f"{method}-{order}",
        train_times=train.times,
        test_times=test_times,
        predicted_mean=band.mean,
        predicted_variance=band.variance,
        actuals=deltas.deltas[test_sl],
        noise_variance=0.0,
        interval_level=level,
        dof=band.dof,
        partial=partial,
        test_dates=tuple(str(d) for d in dates),
    )


def run_baseline_windows(
    deltas: DeltaSeries,
    spec: WindowSpec = WindowSpec(),
    method: str = "poly",
    order: int = 3,
    level: float = 0.95,
) -> list[ForecastRecord]:
    """Moving-window protocol for a baseline; ``order`` is the degree or ``kappa``."""
    return [
        _record(i, method, order, deltas, tr, te, level, partial)
        for i, tr, te, partial in window_slices(len(deltas), spec)
    ]


def fit_baseline_in_sample(
    deltas: DeltaSeries, method: str = "poly", order: int = 20, level: float = 0.95
) -> ForecastRecord:
    everything = slice(0, len(deltas))
    return _record(0, method, order, deltas, everything, everything, level, False)


@dataclass(frozen=True)
class ComparisonRow:
    method: str
    mse: float
    coverage: float

    def to_dict(self) -> dict:
        return {"method": self.method, "mse": self.mse, "coverage": self.coverage}


def compare(gpr_metrics: Metrics, baseline_metrics) -> list[ComparisonRow]:
    """Rows sorted by coverage (descending), then MSE, then method name.

    Every entry must have been scored on the same test points.
    """
    entries = [gpr_metrics, *baseline_metrics]
    reference = entries[0].test_times
    for m in entries[1:]:
        if m.test_times != reference:
            raise DataError(f"metrics for {m.method!r} were computed on different test points")
    rows = [ComparisonRow(m.method, m.mse, m.coverage) for m in entries]
    return sorted(rows, key=lambda r: (-r.coverage, r.mse, r.method))
