"""Uncertainty certificates for the squared-exponential GP posterior.

* a data-dependent upper bound on the posterior variance, from the number
  of training points within radius ``r`` of the test point;
* Lipschitz constants of the kernel, posterior mean and posterior variance;
* the covering number of a time interval and the resulting high-probability
  error bound ``sqrt(gamma) * sigma(t*) + xi``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import DataError
from .gp import (
    Factorization,
    KernelParams,
    NoiseModel,
    Posterior,
    TrainSet,
    factorize,
    frozen_array,
    kernel_matrix,
    posterior as gp_posterior,
)

__all__ = [
    "BoundConfig",
    "LipschitzConstants",
    "BoundReport",
    "VARIANCE_BOUND_FORMS",
    "max_radius",
    "variance_bound",
    "lipschitz_kernel",
    "lipschitz_mean",
    "lipschitz_variance",
    "lipschitz_constants",
    "covering_number",
    "gamma",
    "xi",
    "error_bound",
    "empirical_lipschitz",
    "BoundCheck",
    "check_error_bound",
]

SQRT_E = math.exp(0.5)

#: "alpha4":   alpha^2 - alpha^4 / (alpha^2 + s2/N)  (default)
#: "alpha2":   alpha^2 - alpha^2 / (alpha^2 + s2/N)
#: "radius":   alpha^2 - k(r)^2  / (alpha^2 + s2/N), k(r) = alpha^2 exp(-r^2 / (2 beta^2))
# Only "radius" is guaranteed to dominate the posterior variance; the other two
# treat every in-ball kernel value as alpha^2 and can undershoot when r is large.
VARIANCE_BOUND_FORMS = ("alpha4", "alpha2", "radius")


@dataclass(frozen=True)
class BoundConfig:
    """Parameters of the high-probability error bound.

    ``radius=None`` means the largest admissible ball radius
    ``length_scale * e^{1/2}`` for whichever kernel the bound is applied to.
    """

    tau: float = 5.0
    delta: float = 0.05
    lipschitz_target: float = 0.01
    interval_length: float = 50.0
    radius: float | None = None

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise DataError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.tau > 0:
            raise DataError("tau must be positive")
        if not self.interval_length > 0:
            raise DataError("interval_length must be positive")
        if not self.lipschitz_target >= 0:
            raise DataError("lipschitz_target must be non-negative")
        if self.radius is not None and not self.radius > 0:
            raise DataError("radius must be positive")

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "delta": self.delta,
            "lipschitz_target": self.lipschitz_target,
            "interval_length": self.interval_length,
            "radius": self.radius,
        }


@dataclass(frozen=True)
class LipschitzConstants:
    kernel: float
    mean: float
    variance: float

    def __post_init__(self):
        if min(self.kernel, self.mean, self.variance) < 0:
            raise DataError("Lipschitz constants must be non-negative")

    def to_dict(self) -> dict:
        return {"kernel": self.kernel, "mean": self.mean, "variance": self.variance}


@dataclass(frozen=True, eq=False)
class BoundReport:
    test_times: np.ndarray
    gamma: float
    xi: float
    covering_number: int
    per_point_bound: np.ndarray
    variance_bounds: np.ndarray
    lipschitz: LipschitzConstants
    config: BoundConfig
    radius: float = field(default=float("nan"))

    def __post_init__(self):
        for name in ("test_times", "per_point_bound", "variance_bounds"):
            object.__setattr__(self, name, frozen_array(getattr(self, name)))

    def to_dict(self) -> dict:
        return {
            "test_times": self.test_times.tolist(),
            "gamma": self.gamma,
            "xi": self.xi,
            "covering_number": self.covering_number,
            "per_point_bound": self.per_point_bound.tolist(),
            "variance_bounds": self.variance_bounds.tolist(),
            "lipschitz": self.lipschitz.to_dict(),
            "radius": self.radius,
            "config": self.config.to_dict(),
        }


def max_radius(params: KernelParams) -> float:
    """Largest radius for which the variance bound is valid: ``alpha^2 / L_k``."""
    return params.length_scale * SQRT_E


def variance_bound(
    params: KernelParams,
    noise: NoiseModel,
    train: TrainSet,
    t_star: float,
    r: float | None = None,
    form: str = "alpha4",
) -> float:
    """Upper bound on the posterior variance at ``t_star``.

    Counts ``N = #{t in T : |t - t_star| <= r}`` and returns
    ``alpha^2 - c / (alpha^2 + sigma^2 / N)`` where ``c`` depends on ``form``
    (see ``VARIANCE_BOUND_FORMS``).  With ``N = 0`` the prior variance is
    returned.
    """
    if form not in VARIANCE_BOUND_FORMS:
        raise DataError(f"unknown variance bound form {form!r}")
    limit = max_radius(params)
    r = limit if r is None else float(r)
    if not r > 0:
        raise DataError("radius must be positive")
    if r > limit * (1.0 + 1e-12):
        raise DataError("radius exceeds Lipschitz validity")
    a2 = params.signal_variance
    count = int(np.count_nonzero(np.abs(train.times - t_star) <= r))
    if count == 0:
        return a2
    if form == "alpha4":
        numerator = a2 * a2
    elif form == "alpha2":
        numerator = a2
    else:
        k_r = a2 * math.exp(-(r * r) / (2.0 * params.length_scale**2))
        numerator = k_r * k_r
    value = a2 - numerator / (a2 + noise.variance / count)
    return min(max(value, 0.0), a2)


def lipschitz_kernel(params: KernelParams) -> float:
    return params.signal_variance / (params.length_scale * SQRT_E)


def _factor(params, noise, train, fac):
    return factorize(params, noise, train.times) if fac is None else fac


def lipschitz_mean(
    params: KernelParams, noise: NoiseModel, train: TrainSet, fac: Factorization | None = None
) -> float:
    """``L_k * sqrt(n) * ||(K + sigma^2 I)^{-1} y||_2``."""
    fac = _factor(params, noise, train, fac)
    psi = fac.solve(train.targets)
    return lipschitz_kernel(params) * math.sqrt(train.count) * float(np.linalg.norm(psi))


def lipschitz_variance(
    params: KernelParams, noise: NoiseModel, train: TrainSet, fac: Factorization | None = None
) -> float:
    """``2 n alpha^4 / (beta e^{1/2}) * ||(K + sigma^2 I)^{-1}||_2``.

    The spectral norm of the inverse is ``1 / lambda_min`` of the (SPD)
    noisy kernel matrix; any jitter added during factorization is included.
    """
    fac = _factor(params, noise, train, fac)
    A = kernel_matrix(params, train.times)
    A[np.diag_indices_from(A)] += noise.variance + fac.jitter
    lam_min = float(linalg.eigh(A, eigvals_only=True, subset_by_index=[0, 0])[0])
    if lam_min <= 0:
        # cannot happen for an SPD matrix; eigh roundoff on near-singular input
        lam_min = noise.variance + fac.jitter
    a2 = params.signal_variance
    return 2.0 * train.count * a2 * a2 / (params.length_scale * SQRT_E) / lam_min


def lipschitz_constants(
    params: KernelParams, noise: NoiseModel, train: TrainSet, fac: Factorization | None = None
) -> LipschitzConstants:
    fac = _factor(params, noise, train, fac)
    return LipschitzConstants(
        kernel=lipschitz_kernel(params),
        mean=lipschitz_mean(params, noise, train, fac),
        variance=lipschitz_variance(params, noise, train, fac),
    )


def covering_number(interval_length: float, tau: float) -> int:
    """Number of radius-``tau`` intervals needed to cover an interval: ``ceil(L / (2 tau)) + 1``."""
    if not interval_length > 0 or not tau > 0:
        raise DataError("interval_length and tau must be positive")
    ratio = interval_length / (2.0 * tau)
    # guard against ratios like 5.000000000000001 from division roundoff
    return int(math.ceil(round(ratio, 9))) + 1


def gamma(delta: float, interval_length: float, tau: float) -> float:
    """``2 log(L / (2 tau delta) + 1 / delta)``, using the real-valued covering number."""
    if not 0.0 < delta < 1.0:
        raise DataError(f"delta must lie in (0, 1), got {delta}")
    if not interval_length > 0 or not tau > 0:
        raise DataError("interval_length and tau must be positive")
    return 2.0 * math.log(interval_length / (2.0 * tau * delta) + 1.0 / delta)


def xi(tau: float, L_target: float, L_mean: float, L_var: float, gamma_val: float) -> float:
    if min(L_target, L_mean, L_var, gamma_val) < 0:
        raise DataError("xi inputs must be non-negative")
    return (L_target + L_mean) * tau + math.sqrt(gamma_val * L_var * tau)


def error_bound(
    posterior: Posterior,
    config: BoundConfig,
    params: KernelParams,
    noise: NoiseModel,
    train: TrainSet,
    variance_form: str = "alpha4",
) -> BoundReport:
    """Per-test-point high-probability bound on ``|f(t*) - m(t*)|``.

    ``posterior`` must come from the same ``(params, noise, train)``.
    """
    fac = factorize(params, noise, train.times)
    lips = lipschitz_constants(params, noise, train, fac)
    g = gamma(config.delta, config.interval_length, config.tau)
    x = xi(config.tau, config.lipschitz_target, lips.mean, lips.variance, g)
    per_point = math.sqrt(g) * np.sqrt(np.maximum(posterior.variance, 0.0)) + x
    radius = max_radius(params) if config.radius is None else config.radius
    var_bounds = np.array(
        [variance_bound(params, noise, train, t, radius, variance_form) for t in posterior.test_times]
    )
    return BoundReport(
        test_times=posterior.test_times,
        gamma=g,
        xi=x,
        covering_number=covering_number(config.interval_length, config.tau),
        per_point_bound=per_point,
        variance_bounds=var_bounds,
        lipschitz=lips,
        config=config,
        radius=radius,
    )


def empirical_lipschitz(times, values) -> float:
    """Heuristic slope bound ``max |v(t+1) - v(t)| / (t+1 - t)`` over consecutive samples.

    The true function's Lipschitz constant is not observable; this is only a
    data-driven stand-in.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.size < 2:
        return 0.0
    return float(np.max(np.abs(np.diff(values)) / np.diff(times)))


@dataclass(frozen=True, eq=False)
class BoundCheck:
    """Outcome of a Monte-Carlo check of the error bound."""

    trials: int
    test_points: int
    violations: int
    per_trial_violations: np.ndarray
    seed: int

    @property
    def violation_fraction(self) -> float:
        return self.violations / self.test_points if self.test_points else 0.0


def check_error_bound(
    params: KernelParams,
    noise: NoiseModel,
    config: BoundConfig,
    train_times,
    trials: int = 200,
    grid_step: float = 0.1,
    seed: int = 0,
    workers: int | None = None,
) -> BoundCheck:
    """Monte-Carlo validation of the error bound on prior draws.

    Each trial draws a latent function from the prior GP on a fine grid over
    ``[0, interval_length]``, observes it with Gaussian noise at
    ``train_times`` (snapped to the grid), sets the target Lipschitz
    constant to the largest finite-difference slope of the draw, and counts
    grid points where ``|f(t*) - m(t*)|`` exceeds the bound.  Trial ``i``
    uses the ``i``-th child of ``SeedSequence(seed)``, so results do not
    depend on ``workers``.
    """
    grid = np.arange(0.0, config.interval_length + 0.5 * grid_step, grid_step)
    idx = np.unique(np.clip(np.rint(np.asarray(train_times, float) / grid_step).astype(int), 0, grid.size - 1))
    train_grid = grid[idx]
    lam, vecs = np.linalg.eigh(kernel_matrix(params, grid))
    root = vecs * np.sqrt(np.clip(lam, 0.0, None))
    children = np.random.SeedSequence(seed).spawn(trials)

    def one(child) -> int:
        rng = np.random.default_rng(child)
        f = root @ rng.standard_normal(grid.size)
        y = f[idx] + math.sqrt(noise.variance) * rng.standard_normal(idx.size)
        train = TrainSet(train_grid, y)
        post = gp_posterior(params, noise, train, grid)
        slope = empirical_lipschitz(grid, f)
        cfg = BoundConfig(config.tau, config.delta, slope, config.interval_length, config.radius)
        report = error_bound(post, cfg, params, noise, train)
        return int(np.count_nonzero(np.abs(f - post.mean) > report.per_point_bound))

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            counts = list(pool.map(one, children))
    else:
        counts = [one(c) for c in children]
    counts = np.array(counts, dtype=int)
    return BoundCheck(
        trials=trials,
        test_points=trials * grid.size,
        violations=int(counts.sum()),
        per_trial_violations=counts,
        seed=seed,
    )
