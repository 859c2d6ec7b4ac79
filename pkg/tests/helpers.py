"""Shared constructions for the test modules."""
import itertools

import numpy as np

from mbalign import ds_manifold as mf


def random_ds(n, rng, spread=1.0):
    """Strictly positive doubly stochastic matrix with entries of varied size."""
    return mf.sinkhorn_project(np.exp(spread * rng.standard_normal((n, n))))


def random_tangent_at(Y, rng):
    return mf.tangent_project(Y, rng.standard_normal(Y.shape))


def perm_matrix(perm):
    n = len(perm)
    P = np.zeros((n, n))
    P[np.arange(n), perm] = 1.0
    return P


def all_permutations(n):
    return [np.array(p) for p in itertools.permutations(range(n))]


def dense_mba(Y, X, Z):
    """``||Y^T Cx Y - Cz||^2 + ||Y Cz Y^T - Cx||^2`` with explicit n x n covariances."""
    Cx, Cz = X @ X.T, Z @ Z.T
    fwd = np.sum((Y.T @ Cx @ Y - Cz) ** 2)
    bwd = np.sum((Y @ Cz @ Y.T - Cx) ** 2)
    return fwd, bwd


def dense_mba_grad(Y, X, Z):
    Cx, Cz = X @ X.T, Z @ Z.T
    return 4 * Cx @ Y @ (Y.T @ Cx @ Y - Cz) + 4 * (Y @ Cz @ Y.T - Cx) @ Y @ Cz


def dense_gw(Y, X, Z):
    Cx, Cz = X @ X.T, Z @ Z.T
    return -np.trace(Y.T @ Cx @ Y @ Cz)


def dense_gw_grad(Y, X, Z):
    Cx, Cz = X @ X.T, Z @ Z.T
    return -2 * Cx @ Y @ Cz


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def report_criterion(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok
