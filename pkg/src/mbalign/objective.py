"""Covariance-matching objectives and their Euclidean gradients.

Word covariances ``C = E @ E.T`` are never formed. Every quantity is routed
through the ``(n, d)`` factors so a value costs ``O(n^2 d)`` time and a
gradient needs a single ``(n, n)`` output buffer.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonFiniteInput

__all__ = [
    "CovarianceOperator",
    "ObjectiveValue",
    "mba_objective",
    "mba_egrad",
    "mba_value_and_egrad",
    "gw_objective",
    "gw_egrad",
    "gw_value_and_egrad",
]


class CovarianceOperator:
    """Word covariance ``C = E E^T`` held through its ``(n, d)`` factor."""

    def __init__(self, factor):
        factor = np.asarray(factor, dtype=np.float64)
        if factor.ndim != 2:
            raise DimensionMismatch(f"factor must be 2-D, got shape {factor.shape}")
        if not np.all(np.isfinite(factor)):
            raise NonFiniteInput("covariance factor contains NaN or Inf")
        self.factor = factor

    @property
    def n(self):
        return self.factor.shape[0]

    @property
    def d(self):
        return self.factor.shape[1]

    def apply(self, V):
        """``C @ V`` computed as ``E @ (E.T @ V)``."""
        return self.factor @ (self.factor.T @ V)

    def dense(self):
        """Materialize ``C``. Only meant for tests on small ``n``."""
        return self.factor @ self.factor.T

    def max_abs_entry(self):
        # for a Gram matrix the largest entry in magnitude sits on the diagonal
        return float(np.max(np.einsum("ij,ij->i", self.factor, self.factor), initial=0.0))

    def rescaled(self):
        """Operator for ``C / max|C_ij|`` (identity when ``C`` is zero)."""
        m = self.max_abs_entry()
        if m == 0:
            return self
        return CovarianceOperator(self.factor / np.sqrt(m))

    def __repr__(self):
        return f"CovarianceOperator(n={self.n}, d={self.d})"


@dataclass(frozen=True)
class ObjectiveValue:
    """Both Frobenius terms of the bi-directional objective.

    ``forward_term`` is ``||Y^T Cx Y - Cz||^2``, ``backward_term`` is
    ``||Y Cz Y^T - Cx||^2``.
    """

    total: float
    forward_term: float
    backward_term: float


def _check(Y, Cx, Cz):
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] != Y.shape[1]:
        raise DimensionMismatch(f"Y must be square, got {Y.shape}")
    n = Y.shape[0]
    if Cx.n != n or Cz.n != n:
        raise DimensionMismatch(f"Y is {n}x{n} but covariances have n={Cx.n}, {Cz.n}")
    if Cx.d != Cz.d:
        raise DimensionMismatch(f"embedding dimensions differ: {Cx.d} vs {Cz.d}")
    if not np.all(np.isfinite(Y)):
        raise NonFiniteInput("Y contains NaN or Inf")
    return Y


def _sq(A):
    return float(np.einsum("ij,ij->", A, A))


def _mba_parts(Y, X, Z):
    G = X.T @ Y  # d x n, rows of Y^T X as columns
    H = Z.T @ Y.T  # d x n
    GGt = G @ G.T
    GZ = G @ Z
    HHt = H @ H.T
    HX = H @ X
    fwd = _sq(GGt) - 2.0 * _sq(GZ) + _sq(Z.T @ Z)
    bwd = _sq(HHt) - 2.0 * _sq(HX) + _sq(X.T @ X)
    return G, H, GGt, GZ, HHt, HX, max(fwd, 0.0), max(bwd, 0.0)


def _finite(value, what):
    if not np.all(np.isfinite(value)):
        raise NonFiniteInput(f"{what} is not finite")
    return value


def _finite_product(A, B, what):
    """Check ``A @ B`` is finite from its factors, without scanning the product."""
    _finite(A, what)
    _finite(B, what)
    bound = np.abs(A).max(initial=0.0) * np.abs(B).max(initial=0.0) * A.shape[1]
    if not bound < np.finfo(np.float64).max:
        raise NonFiniteInput(f"{what} may overflow")


def mba_objective(Y, Cx, Cz):
    """Bi-directional covariance mismatch at the alignment ``Y``.

    Parameters
    ----------
    Y : array, shape (n, n)
    Cx, Cz : CovarianceOperator
        Source and target word covariances.

    Returns
    -------
    ObjectiveValue
    """
    Y = _check(Y, Cx, Cz)
    *_, fwd, bwd = _mba_parts(Y, Cx.factor, Cz.factor)
    _finite(fwd + bwd, "MBA objective")
    return ObjectiveValue(fwd + bwd, fwd, bwd)


def _out_buffer(out, n):
    if out is not None and (out.shape != (n, n) or out.dtype != np.float64):
        raise DimensionMismatch(f"out must be a float64 {n}x{n} array")
    return out


def mba_value_and_egrad(Y, Cx, Cz, out=None):
    """Objective and Euclidean gradient sharing the ``O(n^2 d)`` products.

    The gradient is ``4 Cx Y (Y^T Cx Y - Cz) + 4 (Y Cz Y^T - Cx) Y Cz``,
    evaluated as one ``(n, 2d) @ (2d, n)`` product written into ``out`` when
    given (the only ``n x n`` buffer the call needs).
    """
    Y = _check(Y, Cx, Cz)
    X, Z = Cx.factor, Cz.factor
    G, H, GGt, GZ, HHt, HX, fwd, bwd = _mba_parts(Y, X, Z)
    # Cx Y R_fwd = X @ (GG^T G - GZ Z^T)
    right = GGt @ G - GZ @ Z.T  # d x n
    # R_bwd Y Cz = (H^T HH^T - X (HX)^T) @ Z^T
    left = H.T @ HHt - X @ HX.T  # n x d
    # scaling the thin factors saves a pass over the n x n result
    A = np.hstack([X, 4.0 * left])
    B = np.vstack([4.0 * right, Z.T])
    _finite_product(A, B, "MBA gradient")
    grad = np.matmul(A, B, out=_out_buffer(out, Y.shape[0]))
    _finite(fwd + bwd, "MBA objective")
    return ObjectiveValue(fwd + bwd, fwd, bwd), grad


def mba_egrad(Y, Cx, Cz):
    return mba_value_and_egrad(Y, Cx, Cz)[1]


def gw_objective(Y, Cx, Cz):
    """``-Trace(Y^T Cx Y Cz)``, computed as ``-||X^T Y Z||_F^2`` (never positive)."""
    Y = _check(Y, Cx, Cz)
    M = Cx.factor.T @ (Y @ Cz.factor)
    return _finite(-_sq(M), "GW objective")


def gw_value_and_egrad(Y, Cx, Cz, out=None):
    """GW objective and its gradient ``-2 Cx Y Cz`` (written into ``out`` if given)."""
    Y = _check(Y, Cx, Cz)
    X, Z = Cx.factor, Cz.factor
    M = X.T @ (Y @ Z)
    A = -2.0 * (X @ M)
    _finite_product(A, Z.T, "GW gradient")
    grad = np.matmul(A, Z.T, out=_out_buffer(out, Y.shape[0]))
    return -_sq(M), grad


def gw_egrad(Y, Cx, Cz):
    return gw_value_and_egrad(Y, Cx, Cz)[1]
