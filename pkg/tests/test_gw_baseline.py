import logging

import numpy as np
import pytest

from mbalign import ds_manifold as mf
from mbalign.errors import NonFiniteInput, NumericalUnderflow
from mbalign.gw_baseline import GwOptions, gw_align, gw_sweep, sinkhorn_ot
from mbalign.inference import round_to_permutation
from mbalign.objective import CovarianceOperator
from mbalign.synthetic import gen_synthetic

# 2x2 cost [[0, 1], [1, 0]] at epsilon 1: diagonal p solves p / (1/2 - p) = e
TWO_BY_TWO_DIAGONAL = 0.36552928931500245


def assert_uniform_marginals(plan, atol=1e-9):
    n = plan.shape[0]
    np.testing.assert_allclose(plan.sum(axis=1), 1 / n, atol=atol)
    np.testing.assert_allclose(plan.sum(axis=0), 1 / n, atol=atol)


class TestSinkhornOt:
    def test_zero_cost_gives_independent_plan(self):
        plan = sinkhorn_ot(np.zeros((5, 5)), 0.1)
        np.testing.assert_allclose(plan, 1 / 25, atol=1e-12)

    def test_two_by_two_fixed_point(self):
        plan = sinkhorn_ot(np.array([[0.0, 1.0], [1.0, 0.0]]), 1.0, tol=1e-12)
        np.testing.assert_allclose(np.diag(plan), TWO_BY_TWO_DIAGONAL, atol=1e-8)
        np.testing.assert_allclose(plan[0, 1], 0.5 - TWO_BY_TWO_DIAGONAL, atol=1e-8)

    def test_diagonal_penalty_moves_mass_off_diagonal(self):
        plan = sinkhorn_ot(100.0 * np.eye(4), 0.01)
        assert np.trace(plan) < 1e-3 * plan.sum()
        assert_uniform_marginals(plan)

    def test_log_domain_matches_standard(self, rng):
        cost = rng.random((6, 6))
        a = sinkhorn_ot(cost, 0.05, tol=1e-12, stabilize="never")
        b = sinkhorn_ot(cost, 0.05, tol=1e-12, stabilize="always")
        np.testing.assert_allclose(a, b, atol=1e-8)

    def test_small_epsilon_switches_to_log_domain(self, rng):
        cost = rng.random((6, 6))
        with pytest.raises(NumericalUnderflow):
            sinkhorn_ot(cost, 1e-4, stabilize="never")
        plan = sinkhorn_ot(cost, 1e-4)
        assert np.all(np.isfinite(plan))
        assert_uniform_marginals(plan, atol=1e-8)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            sinkhorn_ot(np.zeros((2, 3)), 1.0)
        with pytest.raises(ValueError):
            sinkhorn_ot(np.zeros((2, 2)), 0.0)
        with pytest.raises(NonFiniteInput):
            sinkhorn_ot(np.array([[0.0, np.nan], [1.0, 0.0]]), 1.0)


class TestGwAlign:
    def test_options_validation(self):
        with pytest.raises(ValueError):
            GwOptions(epsilon=0.0)
        with pytest.raises(ValueError):
            GwOptions(outer_iters=0)
        with pytest.raises(ValueError):
            GwOptions(stabilize="sometimes")

    def test_zero_covariances_give_uniform(self):
        C = CovarianceOperator(np.zeros((6, 3)))
        res = gw_align(C, C, GwOptions(outer_iters=3))
        np.testing.assert_allclose(res.Y, mf.uniform_point(6), atol=1e-10)

    def test_result_is_doubly_stochastic(self):
        X, Z, _ = gen_synthetic(12, 4, seed=0)
        res = gw_align(CovarianceOperator(X), CovarianceOperator(Z), GwOptions(outer_iters=5))
        assert mf.is_doubly_stochastic(res.Y)
        assert len(res.objectives) == 5

    def test_objective_monotone_on_synthetic(self, caplog):
        X, Z, _ = gen_synthetic(30, 10, seed=1)
        with caplog.at_level(logging.WARNING, logger="mbalign.gw_baseline"):
            res = gw_align(CovarianceOperator(X), CovarianceOperator(Z))
        assert res.monotone or "increased" in caplog.text

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            gw_align(CovarianceOperator(rng.standard_normal((5, 2))), CovarianceOperator(rng.standard_normal((6, 2))))

    def test_sweep_recovers_planted_permutation(self):
        X, Z, perm = gen_synthetic(30, 10, seed=2)
        res = gw_sweep(CovarianceOperator(X), CovarianceOperator(Z))
        assert res.epsilon in (1e-3, 1e-2, 1e-1)
        assert np.mean(round_to_permutation(res.Y) == perm) >= 0.9
