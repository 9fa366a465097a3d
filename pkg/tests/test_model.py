import json

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acd.model import (
    Hyperparams,
    ModelParams,
    edge_loglik_mixture,
    poisson_logpmf_matrix,
    poisson_logpmf_unnormalized,
    rate,
    rate_matrix,
)
from conftest import random_params


def params_of(u, v, w, pi=1.0, mu=0.5):
    return ModelParams(np.atleast_2d(u), np.atleast_2d(v), np.asarray(w, float), pi, mu)


class TestRate:
    def test_single_active_component(self):
        p = params_of([[1, 0], [0, 0]], [[0, 0], [1, 0]], [2, 5])
        assert rate(p, 0, 1) == 2.0

    def test_zero_row_gives_zero(self):
        p = params_of([[0, 0], [1, 1]], [[1, 1], [1, 1]], [3, 4])
        assert rate(p, 0, 1) == 0.0

    def test_hand_dot_product(self):
        p = params_of([[1, 1], [0, 0]], [[0, 0], [2, 3]], [1, 1])
        assert rate(p, 0, 1) == pytest.approx(5.0, abs=1e-15)

    def test_diagonal_rejected(self):
        p = params_of([[1, 1]], [[1, 1]], [1, 1])
        with pytest.raises(ValueError):
            rate(p, 0, 0)

    def test_matrix_matches_scalar(self, rng):
        p = random_params(rng, 6, 3)
        m = rate_matrix(p.u, p.v, p.w)
        for i in range(6):
            for j in range(6):
                if i != j:
                    assert m[i, j] == pytest.approx(rate(p, i, j), rel=1e-14)

    def test_monotone_in_each_factor(self, rng):
        p = random_params(rng, 4, 2)
        base = rate(p, 0, 1)
        for field, idx in (("u", (0, 1)), ("v", (1, 0)), ("w", (1,))):
            arr = getattr(p, field).copy()
            arr[idx] += 0.5
            kwargs = {"u": p.u, "v": p.v, "w": p.w, "pi": p.pi, "mu": p.mu}
            kwargs[field] = arr
            assert rate(ModelParams(**kwargs), 0, 1) >= base

    def test_gauge_rescaling_exact(self, rng):
        # powers of two commute with IEEE rounding, so equality is exact
        p = random_params(rng, 5, 3)
        scaled = ModelParams(p.u * 2.0, p.v, p.w / 2.0, p.pi, p.mu)
        assert np.array_equal(rate_matrix(p.u, p.v, p.w),
                              rate_matrix(scaled.u, scaled.v, scaled.w))


class TestPoissonLogpmf:
    def test_zero_count(self):
        assert poisson_logpmf_unnormalized(0, 1.5) == -1.5

    def test_log_one_vanishes(self):
        assert poisson_logpmf_unnormalized(2, 1.0) == -1.0

    def test_arbitrary_precision_value(self):
        expected = float(-2 + 3 * mpmath.log(2))
        got = poisson_logpmf_unnormalized(3, 2.0)
        assert got == pytest.approx(expected, abs=1e-15)
        assert got == pytest.approx(0.0794415416798, abs=1e-12)

    def test_zero_rate_conventions(self):
        assert poisson_logpmf_unnormalized(0, 0.0) == 0.0
        assert poisson_logpmf_unnormalized(3, 0.0) == -np.inf

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            poisson_logpmf_unnormalized(-1, 1.0)
        with pytest.raises(ValueError):
            poisson_logpmf_unnormalized(1, -0.5)

    @given(a_val=st.integers(0, 20), lam=st.floats(0.01, 50.0))
    @settings(max_examples=60, deadline=None)
    def test_finite_difference_matches_rate_derivative(self, a_val, lam):
        h = 1e-6 * max(1.0, lam)
        num = (poisson_logpmf_unnormalized(a_val, lam + h)
               - poisson_logpmf_unnormalized(a_val, lam - h)) / (2 * h)
        assert num == pytest.approx(a_val / lam - 1.0, rel=1e-6, abs=1e-6)

    def test_matrix_agrees_with_scalar(self, rng):
        a = rng.integers(0, 4, (5, 5)).astype(float)
        lam = rng.uniform(0, 2, (5, 5))
        lam[0, 0] = 0.0
        a[0, 0] = 2.0
        a[1, 1] = 0.0
        lam[1, 1] = 0.0
        got = poisson_logpmf_matrix(a, lam)
        for i in range(5):
            for j in range(5):
                assert got[i, j] == poisson_logpmf_unnormalized(a[i, j], lam[i, j])


class TestEdgeLoglikMixture:
    def test_equal_rates_equal_branches(self):
        p = params_of([[1.0], [1.0]], [[1.0], [1.0]], [1.0], pi=1.0)
        reg, anom = edge_loglik_mixture(p, 0, 1, 2)
        assert reg == anom

    def test_zero_count(self):
        p = params_of([[1.0], [2.0]], [[1.0], [2.0]], [1.0], pi=1.0)
        # M_01 = 1*2*1 = 2
        reg, anom = edge_loglik_mixture(p, 0, 1, 0)
        assert (reg, anom) == (-2.0, -1.0)

    def test_direct_formula(self):
        p = params_of([[0.5], [1.0]], [[1.0], [1.0]], [1.0], pi=0.6)
        reg, anom = edge_loglik_mixture(p, 0, 1, 1)
        assert reg == pytest.approx(-0.5 + np.log(0.5), abs=1e-15)
        assert anom == pytest.approx(-0.6 + np.log(0.6), abs=1e-15)


class TestParams:
    def test_json_roundtrip(self, rng, tmp_path):
        p = random_params(rng, 4, 2)
        path = tmp_path / "params.json"
        p.save(str(path))
        back = ModelParams.load(str(path))
        assert np.array_equal(back.u, p.u) and np.array_equal(back.v, p.v)
        assert np.array_equal(back.w, p.w)
        assert back.pi == p.pi and back.mu == p.mu
        blob = json.loads(path.read_text())
        assert set(blob) == {"u", "v", "w", "pi", "mu", "K"}

    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            ModelParams(np.ones((2, 2)), np.ones((2, 2)), np.ones(3), 1.0, 0.5)
        with pytest.raises(ValueError):
            ModelParams(np.ones((2, 2)), np.ones((2, 2)), np.ones(2), 1.0, 1.5)
        with pytest.raises(ValueError):
            ModelParams(-np.ones((2, 2)), np.ones((2, 2)), np.ones(2), 1.0, 0.5)

    def test_hyperparams_bounds(self):
        Hyperparams(k=3)
        with pytest.raises(ValueError):
            Hyperparams(k=0)
        with pytest.raises(ValueError):
            Hyperparams(k=2, a=0.5)
        with pytest.raises(ValueError):
            Hyperparams(k=2, b=-1)
