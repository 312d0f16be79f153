"""Squared-exponential Gaussian process regression in one input dimension.

All solves go through a Cholesky factor of ``K + sigma^2 I``; no explicit
inverse is ever formed.  A zero-mean prior is used throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg

from .errors import DataError, NumericalError

__all__ = [
    "KernelParams",
    "NoiseModel",
    "TrainSet",
    "Posterior",
    "Factorization",
    "kernel_eval",
    "kernel_matrix",
    "cross_kernel",
    "factorize",
    "posterior",
    "log_marginal_likelihood",
    "hyperparameter_grid",
    "select_hyperparameters",
]

DEFAULT_NOISE_VARIANCE = 0.002

# jitter schedule, as multiples of the signal variance
JITTER_START = 1e-10
JITTER_STOP = 1e-4


def frozen_array(values, dtype=float) -> np.ndarray:
    """Return a read-only 1-D copy of ``values``."""
    arr = np.array(values, dtype=dtype, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


def _positive(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value) or value <= 0.0:
        raise DataError(f"{name} must be a finite positive number, got {value!r}")
    return value


@dataclass(frozen=True)
class KernelParams:
    """Hyperparameters of ``k(a, b) = signal_variance * exp(-(a-b)^2 / (2 length_scale^2))``."""

    signal_variance: float
    length_scale: float

    def __post_init__(self):
        object.__setattr__(self, "signal_variance", _positive("signal_variance", self.signal_variance))
        object.__setattr__(self, "length_scale", _positive("length_scale", self.length_scale))

    def to_dict(self) -> dict:
        return {"signal_variance": self.signal_variance, "length_scale": self.length_scale}


@dataclass(frozen=True)
class NoiseModel:
    """I.i.d. Gaussian observation noise on the targets."""

    variance: float = DEFAULT_NOISE_VARIANCE

    def __post_init__(self):
        object.__setattr__(self, "variance", _positive("noise variance", self.variance))


@dataclass(frozen=True, eq=False)
class TrainSet:
    times: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        times = frozen_array(self.times)
        targets = frozen_array(self.targets)
        if times.size == 0:
            raise DataError("empty training set")
        if times.shape != targets.shape:
            raise DataError(
                f"times and targets differ in length ({times.size} != {targets.size})"
            )
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(targets))):
            raise DataError("training data must be finite")
        if np.any(np.diff(times) <= 0):
            raise DataError("training times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "targets", targets)

    @property
    def count(self) -> int:
        return int(self.times.size)

    def __len__(self) -> int:
        return self.count


@dataclass(frozen=True, eq=False)
class Posterior:
    """Pointwise posterior of the latent function at ``test_times``."""

    test_times: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    log_marginal_likelihood: float

    def __post_init__(self):
        for name in ("test_times", "mean", "variance"):
            object.__setattr__(self, name, frozen_array(getattr(self, name)))

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


def kernel_eval(params: KernelParams, a: float, b: float) -> float:
    d = float(a) - float(b)
    return params.signal_variance * math.exp(-(d * d) / (2.0 * params.length_scale**2))


def cross_kernel(params: KernelParams, a, b) -> np.ndarray:
    """Rectangular kernel block ``[k(a_i, b_j)]``."""
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    d = a[:, None] - b[None, :]
    return params.signal_variance * np.exp(-(d * d) / (2.0 * params.length_scale**2))


def kernel_matrix(params: KernelParams, times) -> np.ndarray:
    times = np.asarray(times, dtype=float).reshape(-1)
    if times.size == 0:
        raise DataError("empty training set")
    K = cross_kernel(params, times, times)
    # exact symmetry regardless of rounding in the subtraction
    K = np.triu(K) + np.triu(K, 1).T
    np.fill_diagonal(K, params.signal_variance)
    return K


@dataclass(frozen=True, eq=False)
class Factorization:
    """Lower Cholesky factor of ``K(T,T) + (sigma^2 + jitter) I``."""

    lower: np.ndarray
    jitter: float

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return linalg.cho_solve((self.lower, True), rhs, check_finite=False)

    def half_solve(self, rhs: np.ndarray) -> np.ndarray:
        """Return ``L^{-1} rhs``."""
        return linalg.solve_triangular(self.lower, rhs, lower=True, check_finite=False)

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))

    def matrix(self) -> np.ndarray:
        """Reassembled ``K + (sigma^2 + jitter) I`` (for norm computations)."""
        return self.lower @ self.lower.T


def factorize(params: KernelParams, noise: NoiseModel, times) -> Factorization:
    """Cholesky-factor the noisy kernel matrix, escalating diagonal jitter on failure.

    Jitter starts at ``1e-10 * signal_variance`` and grows by a factor of ten
    up to ``1e-4 * signal_variance``.
    """
    A = kernel_matrix(params, times)
    A[np.diag_indices_from(A)] += noise.variance
    jitter = 0.0
    scale = JITTER_START
    while True:
        try:
            if jitter:
                Aj = A.copy()
                Aj[np.diag_indices_from(Aj)] += jitter
            else:
                Aj = A
            L = linalg.cholesky(Aj, lower=True, check_finite=False)
            if np.all(np.isfinite(L)) and np.all(np.diag(L) > 0):
                return Factorization(lower=L, jitter=jitter)
        except linalg.LinAlgError:
            pass
        if scale > JITTER_STOP * (1 + 1e-9):
            raise NumericalError("ill-conditioned kernel matrix")
        jitter = scale * params.signal_variance
        scale *= 10.0


def _lml(fac: Factorization, targets: np.ndarray) -> float:
    alpha = fac.solve(targets)
    n = targets.size
    return float(-0.5 * targets @ alpha - 0.5 * fac.logdet() - 0.5 * n * math.log(2.0 * math.pi))


def log_marginal_likelihood(params: KernelParams, noise: NoiseModel, train: TrainSet) -> float:
    fac = factorize(params, noise, train.times)
    return _lml(fac, train.targets)


def posterior(params: KernelParams, noise: NoiseModel, train: TrainSet, test_times) -> Posterior:
    """Posterior mean and variance of the latent function at ``test_times``.

    ``mean = K(t*,T) A^{-1} y`` and ``variance = k(t*,t*) - K(t*,T) A^{-1} K(T,t*)``
    with ``A = K(T,T) + sigma^2 I``.  Negative variances from roundoff are
    clamped to zero.
    """
    test_times = np.asarray(test_times, dtype=float).reshape(-1)
    fac = factorize(params, noise, train.times)
    alpha = fac.solve(train.targets)
    Ks = cross_kernel(params, test_times, train.times)
    mean = Ks @ alpha
    V = fac.half_solve(Ks.T)
    variance = params.signal_variance - np.sum(V * V, axis=0)
    np.maximum(variance, 0.0, out=variance)
    return Posterior(
        test_times=test_times,
        mean=mean,
        variance=variance,
        log_marginal_likelihood=_lml(fac, train.targets),
    )


def hyperparameter_grid(
    signal_variance_bounds: tuple[float, float] = (1e-4, 10.0),
    signal_variance_points: int = 11,
    length_scale_bounds: tuple[float, float] = (1.0, 100.0),
    length_scale_points: int = 13,
) -> list[KernelParams]:
    """Log-spaced grid over (signal variance, length scale)."""
    if signal_variance_points < 1 or length_scale_points < 1:
        raise DataError("grid must have at least one point per axis")
    a2 = np.geomspace(*signal_variance_bounds, signal_variance_points)
    beta = np.geomspace(*length_scale_bounds, length_scale_points)
    return [KernelParams(float(a), float(b)) for b in beta for a in a2]


def select_hyperparameters(
    train: TrainSet,
    noise: NoiseModel,
    grid: Iterable[KernelParams] | None = None,
) -> KernelParams:
    """Grid point with the largest log marginal likelihood.

    Ties go to the smallest length scale, then the smallest signal variance.
    Candidates whose kernel matrix cannot be factorized are skipped.
    """
    candidates: Sequence[KernelParams] = hyperparameter_grid() if grid is None else list(grid)
    if not candidates:
        raise DataError("hyperparameter grid is empty")
    ordered = sorted(candidates, key=lambda p: (p.length_scale, p.signal_variance))
    best = None
    best_value = -math.inf
    for params in ordered:
        try:
            value = log_marginal_likelihood(params, noise, train)
        except NumericalError:
            continue
        if best is None or value > best_value:
            best, best_value = params, value
    if best is None:
        raise NumericalError("ill-conditioned kernel matrix for every grid point")
    return best
