import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import inverse_posterior, se_kernel
from epigp.errors import DataError, NumericalError
from epigp.gp import (
    KernelParams,
    NoiseModel,
    TrainSet,
    factorize,
    hyperparameter_grid,
    kernel_eval,
    kernel_matrix,
    log_marginal_likelihood,
    posterior,
    select_hyperparameters,
)


def random_instance(rng, n_max=12):
    n = int(rng.integers(1, n_max + 1))
    times = np.sort(rng.choice(np.arange(0, 60, 0.5), n, replace=False))
    a2 = float(np.exp(rng.uniform(np.log(0.01), np.log(10))))
    beta = float(np.exp(rng.uniform(np.log(0.5), np.log(50))))
    s2 = float(np.exp(rng.uniform(np.log(1e-4), np.log(1))))
    y = rng.normal(0, 1, n)
    test = rng.uniform(-5, 65, 7)
    return a2, beta, s2, times, y, test


class TestKernel:
    def test_identical_arguments(self):
        assert kernel_eval(KernelParams(1, 1), 3, 3) == 1.0

    def test_far_apart(self):
        assert kernel_eval(KernelParams(2, 1), 0, 1000) < 1e-300

    def test_unit_distance(self):
        assert kernel_eval(KernelParams(1, 1), 0, 1) == pytest.approx(0.606531, abs=1e-6)

    def test_single_time_matrix(self):
        K = kernel_matrix(KernelParams(2.5, 3), [5])
        assert K.shape == (1, 1) and K[0, 0] == 2.5

    def test_two_point_matrix(self):
        K = kernel_matrix(KernelParams(1, 1), [0, 1])
        e = math.exp(-0.5)
        np.testing.assert_allclose(K, [[1, e], [e, 1]], rtol=0, atol=1e-15)

    def test_empty_matrix(self):
        with pytest.raises(DataError, match="empty training set"):
            kernel_matrix(KernelParams(1, 1), [])

    @given(
        st.lists(st.floats(-100, 100), min_size=1, max_size=15),
        st.floats(0.01, 10),
        st.floats(0.1, 50),
    )
    def test_matrix_symmetric_psd(self, times, a2, beta):
        K = kernel_matrix(KernelParams(a2, beta), times)
        assert np.array_equal(K, K.T)
        assert np.all(np.diag(K) == a2)
        assert np.linalg.eigvalsh(K).min() >= -1e-9 * a2 * len(times)

    def test_invalid_params(self):
        with pytest.raises(DataError):
            KernelParams(0, 1)
        with pytest.raises(DataError):
            KernelParams(1, -1)
        with pytest.raises(DataError):
            NoiseModel(0)


class TestTrainSet:
    def test_rejects_unsorted(self):
        with pytest.raises(DataError):
            TrainSet([1, 0], [0, 0])

    def test_rejects_mismatch(self):
        with pytest.raises(DataError):
            TrainSet([0, 1], [0])

    def test_rejects_empty(self):
        with pytest.raises(DataError, match="empty training set"):
            TrainSet([], [])

    def test_immutable(self):
        ts = TrainSet([0, 1], [1, 2])
        with pytest.raises(ValueError):
            ts.targets[0] = 5


class TestPosterior:
    def test_single_point_closed_form(self):
        a2, s2, y1 = 1.7, 0.3, 0.8
        post = posterior(KernelParams(a2, 2), NoiseModel(s2), TrainSet([4.0], [y1]), [4.0])
        assert post.mean[0] == pytest.approx(a2 * y1 / (a2 + s2), abs=1e-14)
        assert post.variance[0] == pytest.approx(a2 - a2**2 / (a2 + s2), abs=1e-14)

    def test_zero_targets(self):
        post = posterior(KernelParams(1, 3), NoiseModel(), TrainSet([0, 1, 2], [0, 0, 0]), np.linspace(-5, 10, 9))
        assert np.all(post.mean == 0)

    def test_matches_inverse_oracle(self, rng):
        for _ in range(200):
            a2, beta, s2, times, y, test = random_instance(rng)
            post = posterior(KernelParams(a2, beta), NoiseModel(s2), TrainSet(times, y), test)
            mean, var = inverse_posterior(a2, beta, s2, times, y, test)
            assert np.max(np.abs(post.mean - mean)) <= 1e-8
            assert np.max(np.abs(post.variance - np.maximum(var, 0))) <= 1e-8

    def test_variance_below_prior(self, rng):
        for _ in range(100):
            a2, beta, s2, times, y, test = random_instance(rng)
            post = posterior(KernelParams(a2, beta), NoiseModel(s2), TrainSet(times, y), test)
            assert np.all(post.variance >= 0)
            assert np.all(post.variance <= a2 + 1e-10)

    def test_linear_in_targets(self, rng):
        a2, beta, s2, times, y, test = random_instance(rng)
        p, n, tr = KernelParams(a2, beta), NoiseModel(s2), TrainSet(times, y)
        one = posterior(p, n, tr, test)
        two = posterior(p, n, TrainSet(times, 2 * y), test)
        np.testing.assert_array_equal(two.mean, 2 * one.mean)
        np.testing.assert_array_equal(two.variance, one.variance)

    def test_extra_observation_never_increases_variance(self, rng):
        for _ in range(100):
            a2, beta, s2, times, y, test = random_instance(rng, n_max=11)
            p, n = KernelParams(a2, beta), NoiseModel(s2)
            new_t = float(rng.uniform(0, 60))
            if np.any(np.abs(times - new_t) < 1e-6):
                continue
            t2 = np.sort(np.append(times, new_t))
            before = posterior(p, n, TrainSet(times, y), test).variance
            after = posterior(p, n, TrainSet(t2, np.zeros(t2.size)), test).variance
            assert np.all(after <= before + 1e-10)

    def test_interpolation_limit(self):
        times = np.arange(0.0, 10.0)
        y = np.sin(times)
        post = posterior(KernelParams(1, 1), NoiseModel(1e-10), TrainSet(times, y), times)
        np.testing.assert_allclose(post.mean, y, atol=1e-4)

    def test_jitter_rescues_duplicates(self):
        times = [0.0, 1e-9, 2e-9]
        fac = factorize(KernelParams(1, 100), NoiseModel(1e-18), times)
        assert fac.jitter > 0

    def test_ill_conditioned(self):
        with pytest.raises(NumericalError, match="ill-conditioned kernel matrix"):
            factorize(KernelParams(1, 1), NoiseModel(1), [0.0, float("nan")])


class TestLikelihood:
    def test_scalar_at_zero(self):
        lml = log_marginal_likelihood(KernelParams(0.75, 1), NoiseModel(0.25), TrainSet([0], [0]))
        assert lml == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)
        assert lml == pytest.approx(-0.918939, abs=1e-6)

    def test_zero_targets_maximize_quadratic(self, rng):
        times = np.arange(5.0)
        p, n = KernelParams(1, 2), NoiseModel(0.1)
        base = log_marginal_likelihood(p, n, TrainSet(times, np.zeros(5)))
        for _ in range(10):
            assert log_marginal_likelihood(p, n, TrainSet(times, rng.normal(size=5))) < base

    def test_matches_dense_oracle(self, rng):
        for _ in range(100):
            a2, beta, s2, times, y, _ = random_instance(rng, n_max=10)
            A = se_kernel(a2, beta, times, times) + s2 * np.eye(len(times))
            sign, logdet = np.linalg.slogdet(A)
            expected = -0.5 * y @ np.linalg.inv(A) @ y - 0.5 * logdet - 0.5 * len(y) * math.log(2 * math.pi)
            got = log_marginal_likelihood(KernelParams(a2, beta), NoiseModel(s2), TrainSet(times, y))
            assert abs(got - expected) <= 1e-8 * max(1.0, abs(expected))


class TestSelection:
    def test_default_grid_shape(self):
        grid = hyperparameter_grid()
        assert len(grid) == 143
        a2 = sorted({p.signal_variance for p in grid})
        beta = sorted({p.length_scale for p in grid})
        assert a2[0] == pytest.approx(1e-4) and a2[-1] == pytest.approx(10)
        assert beta[0] == pytest.approx(1) and beta[-1] == pytest.approx(100)

    def test_single_point(self):
        p = KernelParams(0.3, 4)
        assert select_hyperparameters(TrainSet([0, 1], [0.1, 0.2]), NoiseModel(), [p]) == p

    def test_duplicate_tie(self):
        p = KernelParams(0.3, 4)
        train = TrainSet([0, 1], [0.1, 0.2])
        assert select_hyperparameters(train, NoiseModel(), [p, KernelParams(0.3, 4)]) == p

    def test_tie_break_rule(self):
        # zero targets and far-apart points: the LML depends only on alpha^2 for all beta small enough
        train = TrainSet([0.0, 1000.0], [0.0, 0.0])
        grid = [KernelParams(1, 5), KernelParams(1, 2), KernelParams(1, 3)]
        assert select_hyperparameters(train, NoiseModel(), grid) == KernelParams(1, 2)

    def test_empty_grid(self):
        with pytest.raises(DataError):
            select_hyperparameters(TrainSet([0], [0]), NoiseModel(), [])

    def test_all_fail(self, monkeypatch):
        import epigp.gp as gp

        def broken(*args, **kwargs):
            raise NumericalError("ill-conditioned kernel matrix")

        monkeypatch.setattr(gp, "factorize", broken)
        with pytest.raises(NumericalError):
            select_hyperparameters(TrainSet([0, 1], [0, 1]), NoiseModel(), hyperparameter_grid())

    def test_skips_failing_candidates(self, monkeypatch):
        import epigp.gp as gp

        real = gp.factorize

        def flaky(params, noise, times):
            if params.length_scale < 2:
                raise NumericalError("ill-conditioned kernel matrix")
            return real(params, noise, times)

        monkeypatch.setattr(gp, "factorize", flaky)
        grid = [KernelParams(1, 1), KernelParams(1, 3)]
        assert select_hyperparameters(TrainSet([0, 1], [0, 1]), NoiseModel(), grid).length_scale == 3

    def test_recovers_generator_majority(self):
        grid = hyperparameter_grid()
        truth = KernelParams(1.0, 10.0)
        noise = NoiseModel(0.002)
        times = np.arange(0.0, 300.0)
        K = se_kernel(truth.signal_variance, truth.length_scale, times, times)
        L = np.linalg.cholesky(K + 1e-8 * np.eye(times.size))
        logs = np.array([[math.log(p.signal_variance), math.log(p.length_scale)] for p in grid])
        nearest = grid[int(np.argmin(np.sum((logs - [0.0, math.log(10.0)]) ** 2, axis=1)))]
        hits = 0
        for seed in range(20):
            r = np.random.default_rng(seed)
            y = L @ r.standard_normal(times.size) + math.sqrt(noise.variance) * r.standard_normal(times.size)
            hits += select_hyperparameters(TrainSet(times, y), noise, grid) == nearest
        assert hits > 10


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_posterior_invariants_property(seed):
    rng = np.random.default_rng(seed)
    a2, beta, s2, times, y, test = random_instance(rng)
    post = posterior(KernelParams(a2, beta), NoiseModel(s2), TrainSet(times, y), test)
    assert post.mean.shape == post.variance.shape == test.shape
    assert np.all((0 <= post.variance) & (post.variance <= a2 + 1e-10))
