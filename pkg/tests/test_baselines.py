import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import synthetic_cases
from epigp.baselines import (
    compare,
    fit_baseline_in_sample,
    knn_fit,
    knn_predict,
    poly_fit,
    poly_predict,
    run_baseline_windows,
)
from epigp.errors import DataError
from epigp.forecast import WindowSpec, coverage, evaluate
from epigp.gp import TrainSet
from epigp.transform import CaseSeries, log_difference, rolling_average


def deltas(n=200):
    raw = CaseSeries(np.datetime64("2022-03-01") + np.arange(n), synthetic_cases(n))
    return log_difference(rolling_average(raw, 30), 7)


class TestPoly:
    def test_exact_line(self):
        t = np.arange(10.0)
        m = poly_fit(TrainSet(t, 3 - 0.5 * t), 1)
        assert m.residual_variance == pytest.approx(0, abs=1e-20)
        band = poly_predict(m, [2.0, 20.0])
        np.testing.assert_allclose(band.mean, [2.0, -7.0], atol=1e-8)
        np.testing.assert_allclose(band.upper - band.lower, 0, atol=1e-8)

    def test_degree_zero(self, rng):
        y = rng.normal(size=12)
        m = poly_fit(TrainSet(np.arange(12.0), y), 0)
        assert len(m.coefficients) == 1
        assert m.coefficients[0] == pytest.approx(y.mean())

    def test_normal_equations_oracle(self, rng):
        for _ in range(100):
            n = int(rng.integers(2, 21))
            d = int(rng.integers(0, min(n - 1, 6) + 1))
            t = np.sort(rng.choice(np.arange(100.0), n, replace=False))
            y = rng.normal(size=n)
            m = poly_fit(TrainSet(t, y), d)
            X = m.design(t)
            coef = np.linalg.solve(X.T @ X, X.T @ y)
            np.testing.assert_allclose(m.coefficients, coef, atol=1e-6)
            assert len(m.coefficients) == d + 1

    @settings(max_examples=30)
    @given(st.integers(0, 7), st.integers(0, 2**32 - 1))
    def test_reproduces_polynomials(self, d, seed):
        rng = np.random.default_rng(seed)
        t = np.arange(1.0, 41.0)
        coef = rng.normal(size=d + 1)
        u = (t - 20.5) / 19.5
        y = np.polyval(coef, u)
        m = poly_fit(TrainSet(t, y), d)
        assert np.max(np.abs(poly_predict(m, t).mean - y)) <= 1e-8

    def test_degree_twenty_is_stable(self):
        t = np.arange(1.0, 336.0)
        m = poly_fit(TrainSet(t, np.sin(t / 30)), 20)
        assert np.all(np.isfinite(poly_predict(m, t).mean))

    def test_extrapolation_widens(self, rng):
        t = np.arange(30.0)
        m = poly_fit(TrainSet(t, rng.normal(size=30)), 3)
        band = poly_predict(m, np.arange(30.0, 50.0))
        assert np.all(np.diff(band.upper - band.lower) > 0)

    def test_zero_dof_is_unbounded(self):
        m = poly_fit(TrainSet([0.0, 1.0], [0.0, 1.0]), 1)
        band = poly_predict(m, [0.5])
        assert band.lower[0] == -math.inf and band.upper[0] == math.inf

    def test_errors(self):
        with pytest.raises(DataError):
            poly_fit(TrainSet([0.0, 1.0], [0, 1]), 2)

    def test_degenerate(self):
        # four points clustered within 3e-9 of each other plus one far away
        t = np.array([0.0, 1e-9, 2e-9, 3e-9, 1.0])
        with pytest.raises(DataError, match="degenerate polynomial basis"):
            poly_fit(TrainSet(t, np.zeros(5)), 4)


class TestKnn:
    def test_example(self):
        band = knn_predict(knn_fit(TrainSet([0, 1, 2], [0, 1, 2]), 2), [0.9])
        assert band.mean[0] == pytest.approx(0.5)
        assert math.sqrt(band.variance[0]) == pytest.approx(0.707107, abs=1e-6)

    def test_global_mean(self, rng):
        y = rng.normal(size=9)
        band = knn_predict(knn_fit(TrainSet(np.arange(9.0), y), 9), rng.uniform(-10, 20, 5))
        np.testing.assert_allclose(band.mean, y.mean())

    def test_constant_targets(self):
        band = knn_predict(knn_fit(TrainSet(np.arange(9.0), np.full(9, 0.3)), 4), [2.5, 30])
        np.testing.assert_allclose(band.mean, 0.3)
        np.testing.assert_allclose(band.upper - band.lower, 0, atol=1e-15)

    def test_tie_goes_earlier(self):
        band = knn_predict(knn_fit(TrainSet([0, 2], [10, 20]), 1), [1.0])
        assert band.mean[0] == 10

    def test_kappa_one_zero_width(self):
        band = knn_predict(knn_fit(TrainSet([0, 1, 2], [1, 5, 2]), 1), [0.9])
        assert band.lower[0] == band.upper[0] == 5

    @given(st.floats(-1e4, 1e4), st.integers(0, 2**32 - 1))
    def test_shift_invariant(self, shift, seed):
        rng = np.random.default_rng(seed)
        t = np.sort(rng.choice(np.arange(50.0), 12, replace=False))
        y = rng.normal(size=12)
        q = rng.uniform(0, 50, 6)
        # integer shifts keep distances exact
        s = float(round(shift))
        a = knn_predict(knn_fit(TrainSet(t, y), 3), q)
        b = knn_predict(knn_fit(TrainSet(t + s, y), 3), q + s)
        np.testing.assert_array_equal(a.mean, b.mean)

    def test_errors(self):
        with pytest.raises(DataError):
            knn_fit(TrainSet([0, 1], [0, 1]), 3)
        with pytest.raises(DataError):
            knn_fit(TrainSet([0, 1], [0, 1]), 0)


def test_intervals_cover_well_specified_data():
    rng = np.random.default_rng(99)
    t = np.arange(60.0)
    poly_hits, knn_hits, total = 0, 0, 0
    for _ in range(100):
        y_poly = 0.1 + 0.02 * (t / 60) - 0.3 * (t / 60) ** 3 + 0.05 * rng.standard_normal(60)
        y_knn = 0.2 + 0.05 * rng.standard_normal(60)
        pb = poly_predict(poly_fit(TrainSet(t, y_poly), 3), t)
        kb = knn_predict(knn_fit(TrainSet(t, y_knn), 15), t)
        poly_hits += np.count_nonzero((y_poly >= pb.lower) & (y_poly <= pb.upper))
        knn_hits += np.count_nonzero((y_knn >= kb.lower) & (y_knn <= kb.upper))
        total += t.size
    assert poly_hits / total >= 0.9
    assert knn_hits / total >= 0.9


def test_deterministic():
    d = deltas()
    a = run_baseline_windows(d, WindowSpec(), "poly", 3)
    b = run_baseline_windows(d, WindowSpec(), "poly", 3)
    assert [r.to_dict() for r in a] == [r.to_dict() for r in b]


class TestHarness:
    def test_records(self):
        d = deltas()
        recs = run_baseline_windows(d, WindowSpec(), "knn", 3)
        assert recs[0].method == "knn-3" and recs[0].noise_variance == 0
        assert 0 <= coverage(recs) <= 1

    def test_in_sample(self):
        d = deltas()
        rec = fit_baseline_in_sample(d, "poly", 20)
        assert rec.method == "poly-20" and rec.test_times.size == len(d)

    def test_unknown(self):
        with pytest.raises(DataError):
            run_baseline_windows(deltas(), WindowSpec(), "nn", 3)


class TestCompare:
    def test_single(self):
        m = evaluate(run_baseline_windows(deltas(), WindowSpec(), "poly", 3))
        rows = compare(m, [])
        assert len(rows) == 1 and rows[0].method == "poly-3"

    def test_sorted(self):
        d = deltas()
        ms = [evaluate(run_baseline_windows(d, WindowSpec(), k, o)) for k, o in (("knn", 3), ("poly", 3), ("knn", 1))]
        rows = compare(ms[0], ms[1:])
        keys = [(-r.coverage, r.mse, r.method) for r in rows]
        assert keys == sorted(keys)

    def test_mismatch(self):
        d = deltas()
        a = evaluate(run_baseline_windows(d, WindowSpec(), "poly", 3))
        b = evaluate(run_baseline_windows(d, WindowSpec(40, 20), "poly", 3))
        with pytest.raises(DataError):
            compare(a, [b])
