"""Geometry of the manifold of strictly positive doubly stochastic matrices.

Points are ``(n, n)`` float64 arrays with unit row and column sums and
strictly positive entries. Tangent vectors at a point are ``(n, n)`` arrays
with zero row and column sums. The manifold carries the Fisher information
metric ``<xi, eta>_Y = sum(xi * eta / Y)``.

Everything here is a pure function of its inputs.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, cg

from .errors import (
    DimensionMismatch,
    NonConvergence,
    NonFiniteInput,
    RetractionOverflow,
    SingularSystem,
)

__all__ = [
    "ManifoldConfig",
    "sinkhorn_project",
    "marginal_deviation",
    "is_doubly_stochastic",
    "fisher_inner",
    "fisher_norm",
    "tangent_project",
    "egrad_to_rgrad",
    "retract",
    "transport",
    "uniform_point",
    "random_tangent",
]

#: Default tolerance for doubly stochastic membership checks.
TOL_DS = 1e-8
# exp(709) is the float64 ceiling; keep some headroom for the product with Y.
_MAX_EXPONENT = 700.0
_DAMPING = 1e-12


@dataclass(frozen=True)
class ManifoldConfig:
    """Numerical controls for Sinkhorn projection and tangent projection.

    Parameters
    ----------
    sinkhorn_tol : float
        Maximum absolute deviation of any row or column sum from 1.
    sinkhorn_max_iter : int
        Cap on alternating normalization sweeps.
    min_entry : float
        Positivity floor applied before normalization.
    projection_solver : {"dense", "cg"}
        How the (alpha, beta) system of the tangent projection (and of the
        Newton polish below) is solved. ``"dense"`` factors the damped ``2n``
        system directly; ``"cg"`` runs matrix-free conjugate gradient and is
        meant for large vocabularies.
    newton_after : int or None
        Alternating sweeps between attempts at Newton steps on the
        log-scalings. Near permutation matrices plain alternation converges
        very slowly; Newton reaches the same scaling in a handful of steps.
        ``None`` disables the polish.
    """

    sinkhorn_tol: float = 1e-10
    sinkhorn_max_iter: int = 20000
    min_entry: float = 1e-16
    projection_solver: str = "dense"
    newton_after: int | None = 50

    def __post_init__(self):
        if not self.sinkhorn_tol > 0:
            raise ValueError("sinkhorn_tol must be > 0")
        if self.sinkhorn_max_iter < 1:
            raise ValueError("sinkhorn_max_iter must be >= 1")
        if self.min_entry < 0:
            raise ValueError("min_entry must be >= 0")
        if self.projection_solver not in ("dense", "cg"):
            raise ValueError(f"unknown projection_solver {self.projection_solver!r}")
        if self.newton_after is not None and self.newton_after < 1:
            raise ValueError("newton_after must be >= 1 or None")


DEFAULT_CONFIG = ManifoldConfig()


def _square(A, name="matrix"):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {A.shape}")
    return A


def _same_shape(*arrays):
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise DimensionMismatch(f"shape mismatch: {shape} vs {a.shape}")


def marginal_deviation(M):
    """Largest absolute deviation of a row or column sum from 1."""
    M = np.asarray(M)
    return max(
        np.abs(M.sum(axis=1) - 1.0).max(),
        np.abs(M.sum(axis=0) - 1.0).max(),
    )


def is_doubly_stochastic(M, tol=TOL_DS):
    """True if ``M`` is square, strictly positive and has unit marginals."""
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        return False
    if not np.all(np.isfinite(M)) or not np.all(M > 0):
        return False
    return marginal_deviation(M) <= tol


def sinkhorn_project(M, cfg=DEFAULT_CONFIG):
    """Scale a positive matrix to be doubly stochastic.

    Alternates row and column normalization (implemented through the two
    diagonal scaling vectors) until every marginal is within
    ``cfg.sinkhorn_tol`` of one.

    Parameters
    ----------
    M : array, shape (n, n)
        Finite matrix with positive entries. Entries below ``cfg.min_entry``
        are raised to it first.
    cfg : ManifoldConfig

    Returns
    -------
    Y : array, shape (n, n)
        ``diag(r) @ M @ diag(c)``, doubly stochastic.

    Raises
    ------
    NonFiniteInput
        If ``M`` has NaN/Inf or non-positive entries after clamping.
    NonConvergence
        If the tolerance is not met within ``cfg.sinkhorn_max_iter`` sweeps.
    """
    M = _square(M)
    if not np.all(np.isfinite(M)):
        raise NonFiniteInput("sinkhorn_project: input contains NaN or Inf")
    if cfg.min_entry > 0:
        M = np.maximum(M, cfg.min_entry)
    if not np.all(M > 0):
        raise NonFiniteInput("sinkhorn_project: input has non-positive entries")

    if marginal_deviation(M) <= cfg.sinkhorn_tol:
        return M.copy()

    n = M.shape[0]
    r = np.ones(n)
    c = np.ones(n)
    Mc = M @ c
    dev = np.inf
    for sweep in range(1, cfg.sinkhorn_max_iter + 1):
        r = 1.0 / Mc
        c = 1.0 / (M.T @ r)
        Mc = M @ c
        # columns are exact after the column step; only rows can be off
        dev = np.abs(r * Mc - 1.0).max()
        if dev <= cfg.sinkhorn_tol:
            break
        # a stalled polish gets another try once the sweeps have moved on
        if cfg.newton_after is not None and sweep % cfg.newton_after == 0:
            r, c, dev = _newton_scaling(M, r, c, cfg)
            if dev <= cfg.sinkhorn_tol:
                break
            Mc = M @ c
    else:
        raise NonConvergence(
            f"Sinkhorn projection: marginal deviation {dev:.3e} after "
            f"{cfg.sinkhorn_max_iter} sweeps"
        )
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(c))):
        raise NonFiniteInput("sinkhorn_project: scaling vectors overflowed")
    return r[:, None] * M * c[None, :]


def _scaled_marginals(M, r, c):
    with np.errstate(over="ignore", invalid="ignore"):
        P = r[:, None] * M * c[None, :]
    return P, P.sum(axis=1), P.sum(axis=0)


def _newton_scaling(M, r, c, cfg, max_steps=30):
    """Newton iterations on ``(log r, log c)`` for the unit-marginal equations.

    Each step solves ``[[diag(P1), P], [P^T, diag(P^T 1)]] (da, db) = -residual``
    and halves the step until the residual shrinks. Returns the best
    ``(r, c, deviation)`` found; the caller falls back to plain sweeps if the
    tolerance is still unmet.
    """
    P, rs, cs = _scaled_marginals(M, r, c)
    dev = max(np.abs(rs - 1).max(), np.abs(cs - 1).max())
    for _ in range(max_steps):
        if dev <= cfg.sinkhorn_tol:
            break
        try:
            da, db = _solve_block(P, rs, cs, 1.0 - rs, 1.0 - cs, cfg)
        except (SingularSystem, np.linalg.LinAlgError, ValueError):
            break
        step = 1.0
        while step > 1e-4:
            with np.errstate(over="ignore"):
                r2 = r * np.exp(step * da)
                c2 = c * np.exp(step * db)
            P2, rs2, cs2 = _scaled_marginals(M, r2, c2)
            dev2 = max(np.abs(rs2 - 1).max(), np.abs(cs2 - 1).max())
            if np.isfinite(dev2) and dev2 < dev:
                break
            step *= 0.5
        else:
            break
        r, c, P, rs, cs, dev = r2, c2, P2, rs2, cs2, dev2
    return r, c, dev


def _solve_block(P, d1, d2, a, b, cfg):
    """Solve ``[[diag(d1), P], [P^T, diag(d2)]] (x, y) = (a, b)`` with damping."""
    n = P.shape[0]
    if cfg.projection_solver == "dense":
        K = np.empty((2 * n, 2 * n))
        K[:n, :n] = np.diag(d1)
        K[:n, n:] = P
        K[n:, :n] = P.T
        K[n:, n:] = np.diag(d2)
        K[np.diag_indices(2 * n)] += _DAMPING
        lu = scipy.linalg.lu_factor(K, check_finite=False)
        sol = scipy.linalg.lu_solve(lu, np.concatenate([a, b]), check_finite=False)
        return sol[:n], sol[n:]

    # eliminate x = (a - P y) / d1, leaving a PSD system in y
    def matvec(y):
        return d2 * y - P.T @ ((P @ y) / d1) + _DAMPING * y

    op = LinearOperator((n, n), matvec=matvec, dtype=np.float64)
    y, info = cg(op, b - P.T @ (a / d1), rtol=1e-13, atol=0.0, maxiter=20 * n)
    if info != 0:
        raise SingularSystem(f"CG did not converge (info={info})")
    return (a - P @ y) / d1, y


def fisher_inner(Y, xi, eta):
    """Fisher metric ``sum(xi * eta / Y)`` at the point ``Y``."""
    Y = np.asarray(Y, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    _same_shape(Y, xi, eta)
    return float(np.sum(xi * eta / Y))


def fisher_norm(Y, xi):
    return float(np.sqrt(max(fisher_inner(Y, xi, xi), 0.0)))


def _solve_dense(Y, a, b):
    n = Y.shape[0]
    K = np.empty((2 * n, 2 * n))
    K[:n, :n] = np.eye(n)
    K[:n, n:] = Y
    K[n:, :n] = Y.T
    K[n:, n:] = np.eye(n)
    K[np.diag_indices(2 * n)] += _DAMPING
    try:
        lu = scipy.linalg.lu_factor(K, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularSystem(str(exc)) from exc

    def solve(a, b):
        sol = scipy.linalg.lu_solve(lu, np.concatenate([a, b]), check_finite=False)
        return sol[:n], sol[n:]

    return solve


def _solve_cg(Y, a, b):
    n = Y.shape[0]

    def matvec(v):
        return v - Y.T @ (Y @ v) + _DAMPING * v

    op = LinearOperator((n, n), matvec=matvec, dtype=np.float64)

    def solve(a, b):
        rhs = b - Y.T @ a
        beta, info = cg(op, rhs, rtol=1e-13, atol=0.0, maxiter=20 * n)
        if info != 0:
            raise SingularSystem(f"tangent projection: CG did not converge (info={info})")
        return a - Y @ beta, beta

    return solve


def tangent_project(Y, Z, cfg=DEFAULT_CONFIG):
    """Fisher-orthogonal projection of ``Z`` onto the tangent space at ``Y``.

    Returns ``Z - (alpha 1^T + 1 beta^T) * Y`` where ``(alpha, beta)`` solve::

        alpha + Y beta     = Z 1
        Y^T alpha + beta   = Z^T 1

    The system is singular along ``(alpha + c, beta - c)``; a tiny diagonal
    damping picks one representative, which does not affect the result.

    Raises
    ------
    SingularSystem
        If the solve fails or leaves marginal residuals far above round-off,
        which happens when ``Y`` is (numerically) on the polytope boundary.
    """
    Y = _square(Y, "Y")
    Z = np.asarray(Z, dtype=np.float64)
    _same_shape(Y, Z)
    if not np.all(np.isfinite(Z)):
        raise NonFiniteInput("tangent_project: Z contains NaN or Inf")

    a = Z.sum(axis=1)
    b = Z.sum(axis=0)
    solver = _solve_dense if cfg.projection_solver == "dense" else _solve_cg
    solve = solver(Y, a, b)
    alpha, beta = solve(a, b)
    xi = Z - (alpha[:, None] + beta[None, :]) * Y
    # one round of iterative refinement on the marginal residual
    alpha, beta = solve(xi.sum(axis=1), xi.sum(axis=0))
    xi -= (alpha[:, None] + beta[None, :]) * Y

    if not np.all(np.isfinite(xi)):
        raise SingularSystem("tangent projection produced non-finite values")
    n = Y.shape[0]
    resid = max(np.abs(xi.sum(axis=1)).max(), np.abs(xi.sum(axis=0)).max())
    scale = np.abs(Z).max() if Z.size else 0.0
    if resid > 1e-6 * n * max(scale, 1.0):
        raise SingularSystem(
            f"tangent projection: marginal residual {resid:.3e} (degenerate base point?)"
        )
    return xi


def egrad_to_rgrad(Y, egrad, cfg=DEFAULT_CONFIG):
    """Convert a Euclidean gradient to the Riemannian (Fisher) gradient.

    The result ``g`` satisfies ``fisher_inner(Y, g, eta) == sum(egrad * eta)``
    for every tangent ``eta`` at ``Y``.
    """
    Y = _square(Y, "Y")
    egrad = np.asarray(egrad, dtype=np.float64)
    _same_shape(Y, egrad)
    return tangent_project(Y, egrad * Y, cfg)


def retract(Y, xi, t, cfg=DEFAULT_CONFIG):
    """Move from ``Y`` along ``t * xi`` and land back on the manifold.

    Uses ``sinkhorn_project(Y * exp(t * xi / Y))``, which keeps every entry
    strictly positive for any step length.

    Raises
    ------
    RetractionOverflow
        If some ``t * xi / Y`` exceeds the exponent range.
    """
    if t < 0:
        raise ValueError("step size must be non-negative")
    Y = _square(Y, "Y")
    xi = np.asarray(xi, dtype=np.float64)
    _same_shape(Y, xi)
    if t == 0:
        return sinkhorn_project(Y, cfg)
    expo = (t * xi) / Y
    top = expo.max()
    if not np.isfinite(top) or top > _MAX_EXPONENT:
        raise RetractionOverflow(f"retraction exponent {top:.3e} out of range")
    return sinkhorn_project(Y * np.exp(expo), cfg)


def transport(Y_to, xi, cfg=DEFAULT_CONFIG):
    """Projection vector transport into the tangent space at ``Y_to``."""
    return tangent_project(Y_to, xi, cfg)


def uniform_point(n):
    """Barycenter of the polytope, ``ones((n, n)) / n``."""
    if n < 2:
        raise ValueError("n must be >= 2")
    return np.full((n, n), 1.0 / n)


def random_tangent(Y, scale, seed=None, cfg=DEFAULT_CONFIG):
    """Random tangent vector at ``Y`` with Fisher norm exactly ``scale``.

    ``seed`` may be anything accepted by :func:`numpy.random.default_rng`.
    """
    if scale < 0:
        raise ValueError("scale must be >= 0")
    Y = _square(Y, "Y")
    if scale == 0:
        return np.zeros_like(Y)
    rng = np.random.default_rng(seed)
    xi = tangent_project(Y, rng.standard_normal(Y.shape), cfg)
    return xi * (scale / fisher_norm(Y, xi))
