import warnings

import numpy as np
import pytest
from helpers import perm_matrix, random_ds
from hypothesis import given
from hypothesis import strategies as st

from mbalign.errors import (
    DataError,
    DimensionMismatch,
    MalformedHeader,
    RankDeficiencyWarning,
)
from mbalign.procrustes import is_orthogonal, load_matrix, procrustes_solve, save_matrix
from mbalign.synthetic import random_orthogonal


def residual(X, W, Y, Z):
    return float(np.sum((X @ W - Y @ Z) ** 2))


class TestProcrustesSolve:
    def test_self_alignment_gives_identity(self, rng):
        X = rng.standard_normal((20, 5))
        W = procrustes_solve(X, np.eye(20), X)
        np.testing.assert_allclose(W, np.eye(5), atol=1e-8)

    def test_recovers_planted_rotation(self, rng):
        X = rng.standard_normal((30, 6))
        W0 = random_orthogonal(6, rng)
        W = procrustes_solve(X, np.eye(30), X @ W0)
        np.testing.assert_allclose(W, W0, atol=1e-8)

    def test_recovers_rotation_through_permutation(self, rng):
        X = rng.standard_normal((15, 4))
        W0 = random_orthogonal(4, rng)
        perm = rng.permutation(15)
        Z = np.empty_like(X)
        Z[perm] = X @ W0
        W = procrustes_solve(X, perm_matrix(perm), Z)
        np.testing.assert_allclose(W, W0, atol=1e-8)

    def test_monte_carlo_optimality(self, rng):
        for _ in range(3):
            n, d = 6, 3
            X = rng.standard_normal((n, d))
            Z = rng.standard_normal((n, d))
            Y = random_ds(n, rng)
            best = residual(X, procrustes_solve(X, Y, Z), Y, Z)
            for _ in range(1000):
                assert best <= residual(X, random_orthogonal(d, rng), Y, Z) + 1e-12

    def test_transpose_problem(self, rng):
        X = rng.standard_normal((7, 3))
        Z = rng.standard_normal((7, 3))
        Y = random_ds(7, rng)
        np.testing.assert_allclose(procrustes_solve(Z, Y.T, X), procrustes_solve(X, Y, Z).T, atol=1e-8)

    def test_rank_deficiency_warns(self, rng):
        X = np.zeros((5, 3))
        X[:, 0] = rng.standard_normal(5)
        with pytest.warns(RankDeficiencyWarning):
            W = procrustes_solve(X, np.eye(5), X)
        assert is_orthogonal(W)

    def test_hard_mode_rounds_first(self, rng):
        X = rng.standard_normal((8, 3))
        W0 = random_orthogonal(3, rng)
        perm = rng.permutation(8)
        Z = np.empty_like(X)
        Z[perm] = X @ W0
        soft = 0.7 * perm_matrix(perm) + 0.3 / 8
        W = procrustes_solve(X, soft, Z, hard=True)
        np.testing.assert_allclose(W, W0, atol=1e-8)

    def test_input_checks(self, rng):
        X = rng.standard_normal((4, 2))
        with pytest.raises(DimensionMismatch):
            procrustes_solve(X, np.eye(4), rng.standard_normal((4, 3)))
        with pytest.raises(DimensionMismatch):
            procrustes_solve(X, np.eye(3), X)
        Y = np.eye(4)
        Y[0, 0] = np.nan
        with pytest.raises(DataError):
            procrustes_solve(X, Y, X)

    @given(st.integers(2, 8), st.integers(1, 5), st.integers(0, 2**31 - 1))
    def test_always_orthogonal(self, n, d, seed):
        rng = np.random.default_rng(seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankDeficiencyWarning)
            W = procrustes_solve(rng.standard_normal((n, d)), random_ds(n, rng), rng.standard_normal((n, d)))
        assert is_orthogonal(W, 1e-8)


class TestMatrixFiles:
    @pytest.mark.parametrize("binary", [True, False])
    def test_round_trip(self, tmp_path, rng, binary):
        W = random_orthogonal(5, rng)
        path = tmp_path / "W.bin"
        save_matrix(path, W, binary=binary)
        np.testing.assert_array_equal(load_matrix(path), W)
        lines = path.read_bytes().split(b"\n")
        assert lines[0] == b"5"
        assert lines[1].startswith(b"mbalign-matrix-v1")

    def test_bad_header(self, tmp_path):
        path = tmp_path / "W"
        path.write_bytes(b"two\nmbalign-matrix-v1 text\n1 0\n0 1\n")
        with pytest.raises(MalformedHeader):
            load_matrix(path)
        path.write_bytes(b"2\nsomething-else text\n1 0\n0 1\n")
        with pytest.raises(MalformedHeader):
            load_matrix(path)

    def test_truncated_body(self, tmp_path):
        path = tmp_path / "W"
        save_matrix(path, np.eye(3))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(DataError):
            load_matrix(path)
        path.write_bytes(b"2\nmbalign-matrix-v1 text\n1 0\n0\n")
        with pytest.raises(DataError):
            load_matrix(path)

    def test_rejects_non_square(self, tmp_path):
        with pytest.raises(DimensionMismatch):
            save_matrix(tmp_path / "W", np.ones((2, 3)))
