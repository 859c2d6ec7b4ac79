import numpy as np
import pytest
from helpers import (
    dense_gw,
    dense_gw_grad,
    dense_mba,
    dense_mba_grad,
    perm_matrix,
    random_ds,
)
from hypothesis import given
from hypothesis import strategies as st

from mbalign.errors import DimensionMismatch, NonFiniteInput
from mbalign.objective import (
    CovarianceOperator,
    gw_egrad,
    gw_objective,
    gw_value_and_egrad,
    mba_egrad,
    mba_objective,
    mba_value_and_egrad,
)


def instance(n, d, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    Z = rng.standard_normal((n, d))
    return random_ds(n, rng), X, Z, rng


def central_difference(f, Y, D, h=1e-5):
    return (f(Y + h * D) - f(Y - h * D)) / (2 * h)


class TestCovarianceOperator:
    def test_apply_matches_dense(self, rng):
        E = rng.standard_normal((7, 3))
        V = rng.standard_normal((7, 4))
        C = CovarianceOperator(E)
        np.testing.assert_allclose(C.apply(V), (E @ E.T) @ V, rtol=1e-10, atol=1e-12)
        assert (C.n, C.d) == (7, 3)

    def test_max_abs_entry_and_rescale(self, rng):
        E = rng.standard_normal((6, 2))
        C = CovarianceOperator(E)
        assert C.max_abs_entry() == pytest.approx(np.abs(E @ E.T).max(), rel=1e-12)
        assert np.abs(C.rescaled().dense()).max() == pytest.approx(1.0, rel=1e-12)

    def test_zero_factor_rescale_is_identity(self):
        C = CovarianceOperator(np.zeros((4, 2)))
        assert C.rescaled() is C

    def test_rejects_bad_factor(self):
        with pytest.raises(DimensionMismatch):
            CovarianceOperator(np.zeros(3))
        with pytest.raises(NonFiniteInput):
            CovarianceOperator(np.array([[np.nan, 1.0]]))


class TestMbaObjective:
    def test_matches_dense_oracle(self):
        Y, X, Z, _ = instance(6, 3, 1)
        val = mba_objective(Y, CovarianceOperator(X), CovarianceOperator(Z))
        fwd, bwd = dense_mba(Y, X, Z)
        assert val.forward_term == pytest.approx(fwd, rel=1e-9)
        assert val.backward_term == pytest.approx(bwd, rel=1e-9)
        assert val.total == val.forward_term + val.backward_term

    def test_uniform_point_same_embeddings_symmetric_terms(self, rng):
        X = rng.standard_normal((5, 3))
        C = CovarianceOperator(X)
        val = mba_objective(np.full((5, 5), 0.2), C, C)
        assert val.forward_term == pytest.approx(val.backward_term, rel=1e-12)

    def test_zero_embeddings(self, rng):
        C = CovarianceOperator(np.zeros((4, 2)))
        assert mba_objective(random_ds(4, rng), C, C).total == 0.0
        np.testing.assert_array_equal(mba_egrad(random_ds(4, rng), C, C), 0.0)

    def test_zero_at_consistent_covariance(self, rng):
        # choose Cz = Y^T Cx Y exactly via an eigenfactorization with d = n
        n = 5
        P = perm_matrix(rng.permutation(n))
        X = rng.standard_normal((n, n))
        target = P.T @ (X @ X.T) @ P
        w, V = np.linalg.eigh(target)
        Z = V * np.sqrt(np.clip(w, 0, None))
        val = mba_objective(P, CovarianceOperator(X), CovarianceOperator(Z))
        # the factored identity subtracts terms of size ||C||^2, so zero is
        # reached up to round-off relative to that scale
        assert val.total < 1e-12 * np.sum(target**2)

    def test_dimension_checks(self, rng):
        Cx = CovarianceOperator(rng.standard_normal((4, 2)))
        Cz = CovarianceOperator(rng.standard_normal((4, 3)))
        with pytest.raises(DimensionMismatch):
            mba_objective(random_ds(4, rng), Cx, Cz)
        with pytest.raises(DimensionMismatch):
            mba_objective(random_ds(5, rng), Cx, Cx)
        with pytest.raises(DimensionMismatch):
            mba_objective(np.ones((4, 3)), Cx, Cx)

    def test_nonfinite_point(self, rng):
        C = CovarianceOperator(rng.standard_normal((3, 2)))
        Y = np.full((3, 3), 1 / 3)
        Y[0, 1] = np.inf
        with pytest.raises(NonFiniteInput):
            mba_objective(Y, C, C)

    @given(st.integers(2, 8), st.integers(1, 4), st.integers(0, 2**31 - 1))
    def test_factored_equals_dense(self, n, d, seed):
        Y, X, Z, _ = instance(n, d, seed)
        Cx, Cz = CovarianceOperator(X), CovarianceOperator(Z)
        val, grad = mba_value_and_egrad(Y, Cx, Cz)
        fwd, bwd = dense_mba(Y, X, Z)
        scale = max(fwd + bwd, 1e-12)
        assert abs(val.total - (fwd + bwd)) <= 1e-9 * scale
        G = dense_mba_grad(Y, X, Z)
        assert np.abs(grad - G).max() <= 1e-9 * max(np.abs(G).max(), 1e-12)

    @given(st.integers(2, 8), st.integers(1, 4), st.integers(0, 2**31 - 1))
    def test_swap_symmetry(self, n, d, seed):
        Y, X, Z, _ = instance(n, d, seed)
        a = mba_objective(Y, CovarianceOperator(X), CovarianceOperator(Z)).total
        b = mba_objective(Y.T, CovarianceOperator(Z), CovarianceOperator(X)).total
        assert a == pytest.approx(b, rel=1e-10)


class TestMbaGradient:
    def test_dense_oracle(self):
        Y, X, Z, _ = instance(6, 3, 2)
        G = mba_egrad(Y, CovarianceOperator(X), CovarianceOperator(Z))
        np.testing.assert_allclose(G, dense_mba_grad(Y, X, Z), rtol=1e-9, atol=1e-9 * np.abs(G).max())

    def test_finite_differences(self):
        Y, X, Z, rng = instance(6, 3, 3)
        Cx, Cz = CovarianceOperator(X), CovarianceOperator(Z)
        G = mba_egrad(Y, Cx, Cz)

        def f(A):
            return mba_objective(A, Cx, Cz).total

        for _ in range(30):
            D = rng.standard_normal((6, 6))
            fd = central_difference(f, Y, D)
            assert np.sum(G * D) == pytest.approx(fd, rel=1e-5, abs=1e-8)

    def test_out_buffer(self):
        Y, X, Z, _ = instance(5, 2, 4)
        Cx, Cz = CovarianceOperator(X), CovarianceOperator(Z)
        out = np.empty((5, 5))
        _, g = mba_value_and_egrad(Y, Cx, Cz, out=out)
        assert g is out
        np.testing.assert_allclose(out, mba_egrad(Y, Cx, Cz), rtol=1e-14)
        with pytest.raises(DimensionMismatch):
            mba_value_and_egrad(Y, Cx, Cz, out=np.empty((4, 4)))


class TestGw:
    def test_dense_oracle(self):
        Y, X, Z, _ = instance(6, 3, 5)
        Cx, Cz = CovarianceOperator(X), CovarianceOperator(Z)
        assert gw_objective(Y, Cx, Cz) == pytest.approx(dense_gw(Y, X, Z), rel=1e-10)
        G = gw_egrad(Y, Cx, Cz)
        np.testing.assert_allclose(G, dense_gw_grad(Y, X, Z), rtol=1e-9, atol=1e-12)

    def test_finite_differences(self):
        Y, X, Z, rng = instance(6, 3, 6)
        Cx, Cz = CovarianceOperator(X), CovarianceOperator(Z)
        G = gw_egrad(Y, Cx, Cz)
        for _ in range(30):
            D = rng.standard_normal((6, 6))
            fd = central_difference(lambda A: gw_objective(A, Cx, Cz), Y, D)
            assert np.sum(G * D) == pytest.approx(fd, rel=1e-5, abs=1e-8)

    def test_zero_embeddings(self, rng):
        C = CovarianceOperator(np.zeros((4, 3)))
        Y = random_ds(4, rng)
        assert gw_objective(Y, C, C) == 0.0
        np.testing.assert_array_equal(gw_egrad(Y, C, C), 0.0)

    @given(st.integers(2, 8), st.integers(1, 4), st.integers(0, 2**31 - 1))
    def test_nonpositive_and_dense(self, n, d, seed):
        Y, X, Z, _ = instance(n, d, seed)
        Cx, Cz = CovarianceOperator(X), CovarianceOperator(Z)
        value, grad = gw_value_and_egrad(Y, Cx, Cz)
        assert value <= 0
        ref = dense_gw(Y, X, Z)
        assert abs(value - ref) <= 1e-9 * max(abs(ref), 1e-12)
        G = dense_gw_grad(Y, X, Z)
        assert np.abs(grad - G).max() <= 1e-9 * max(np.abs(G).max(), 1e-12)
