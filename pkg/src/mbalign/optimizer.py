"""Riemannian conjugate gradient on the doubly stochastic manifold.

Also holds the vocabulary curriculum that warm-starts each stage from the
previous, smaller solution.
"""
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import ds_manifold as mf
from .errors import LineSearchFailure, NumericalError
from .objective import CovarianceOperator, mba_objective, mba_value_and_egrad
from .synthetic import substream

__all__ = [
    "RcgOptions",
    "IterRecord",
    "OptimTrace",
    "CurriculumSchedule",
    "armijo_linesearch",
    "rcg_minimize",
    "warm_start_expand",
    "initial_point",
    "curriculum_align",
]

log = logging.getLogger(__name__)

BETA_RULES = ("polak-ribiere+", "fletcher-reeves", "steepest")
MIN_STEP = 1e-18


@dataclass(frozen=True)
class RcgOptions:
    """Controls for :func:`rcg_minimize`.

    ``beta_rule="steepest"`` forces beta to zero, i.e. Riemannian steepest
    descent.
    """

    max_iter: int = 1000
    grad_tol: float = 1e-6
    armijo_c1: float = 1e-4
    backtrack_factor: float = 0.5
    initial_step: float = 1.0
    beta_rule: str = "polak-ribiere+"
    restart_every: int = 100
    manifold: mf.ManifoldConfig = field(default_factory=mf.ManifoldConfig)

    def __post_init__(self):
        if not 0 < self.armijo_c1 < 1:
            raise ValueError("armijo_c1 must lie in (0, 1)")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if not self.initial_step > 0:
            raise ValueError("initial_step must be > 0")
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")
        if self.restart_every < 1:
            raise ValueError("restart_every must be >= 1")
        if self.beta_rule not in BETA_RULES:
            raise ValueError(f"beta_rule must be one of {BETA_RULES}")


@dataclass(frozen=True)
class IterRecord:
    iteration: int
    objective: float
    grad_norm: float
    step: float
    millis: float


@dataclass
class OptimTrace:
    records: list = field(default_factory=list)
    stop_reason: str = ""
    stage: int = 0
    n: int = 0

    @property
    def converged(self):
        return self.stop_reason == "grad_tol"

    @property
    def accepted_steps(self):
        return max(len(self.records) - 1, 0)

    @property
    def objectives(self):
        return np.array([r.objective for r in self.records])

    @property
    def final_grad_norm(self):
        return self.records[-1].grad_norm if self.records else float("nan")

    def is_monotone(self):
        obj = self.objectives
        return bool(np.all(np.diff(obj) <= 0))

    def to_jsonl(self):
        lines = []
        for r in self.records:
            rec = dataclasses.asdict(r)
            rec["stage"] = self.stage
            rec["n"] = self.n
            lines.append(json.dumps(rec))
        return "\n".join(lines) + ("\n" if lines else "")


def armijo_linesearch(phi, f0, slope, opts=RcgOptions()):
    """Backtracking search for a sufficient-decrease step.

    Tries ``t = initial_step * backtrack_factor**j`` for ``j = 0, 1, ...`` and
    returns the first (largest) ``t`` with
    ``phi(t) <= f0 + armijo_c1 * t * slope``. A trial whose evaluation raises
    a :class:`NumericalError` (retraction overflow, Sinkhorn stalling near
    the boundary) counts as failed.

    Returns
    -------
    (t, phi(t))

    Raises
    ------
    LineSearchFailure
        If ``t`` drops below 1e-18 without sufficient decrease.
    """
    if not slope < 0:
        raise ValueError(f"not a descent direction (slope={slope})")
    t = opts.initial_step
    while t >= MIN_STEP:
        try:
            ft = phi(t)
        except NumericalError:
            ft = np.inf
        if ft <= f0 + opts.armijo_c1 * t * slope:
            return t, ft
        t *= opts.backtrack_factor
    raise LineSearchFailure(f"no sufficient decrease down to step {MIN_STEP:g}")


def _beta(rule, Y_new, g_new, g_old_t, gg_old):
    if rule == "steepest" or gg_old <= 0:
        return 0.0
    if rule == "fletcher-reeves":
        return mf.fisher_inner(Y_new, g_new, g_new) / gg_old
    beta = mf.fisher_inner(Y_new, g_new, g_new - g_old_t) / gg_old
    return max(0.0, beta)


def rcg_minimize(cost, cost_and_egrad, Y0, opts=RcgOptions(), callback=None):
    """Minimize a smooth function over the doubly stochastic manifold.

    Parameters
    ----------
    cost : callable
        ``cost(Y) -> float``; used for line-search trials.
    cost_and_egrad : callable
        ``cost_and_egrad(Y) -> (float, ndarray)`` returning the value and the
        Euclidean gradient.
    Y0 : array, shape (n, n)
        Strictly positive doubly stochastic starting point.
    opts : RcgOptions
    callback : callable, optional
        Called as ``callback(k, Y, record)`` after every accepted step.

    Returns
    -------
    Y : ndarray
        Final iterate (also the best one, since steps never increase the cost).
    trace : OptimTrace
        ``stop_reason`` is ``"grad_tol"``, ``"max_iter"`` or
        ``"linesearch_failure"``.
    """
    cfg = opts.manifold
    Y = np.array(Y0, dtype=np.float64)
    trace = OptimTrace(n=Y.shape[0])
    t_start = time.perf_counter()

    f, eg = cost_and_egrad(Y)
    f = float(f)
    g = mf.egrad_to_rgrad(Y, eg, cfg)
    gg = mf.fisher_inner(Y, g, g)
    trace.records.append(IterRecord(0, f, float(np.sqrt(gg)), 0.0, 0.0))
    eta = -g

    for k in range(1, opts.max_iter + 1):
        if np.sqrt(gg) < opts.grad_tol:
            trace.stop_reason = "grad_tol"
            break
        slope = mf.fisher_inner(Y, g, eta)
        if slope >= 0 or (k - 1) % opts.restart_every == 0:
            eta = -g
            slope = -gg

        cache = {}

        def phi(t):
            Yt = mf.retract(Y, eta, t, cfg)
            cache[t] = Yt
            return float(cost(Yt))

        try:
            t, f_new = armijo_linesearch(phi, f, slope, opts)
        except (LineSearchFailure, NumericalError) as exc:
            if np.array_equal(eta, -g):
                log.info("line search failed at iteration %d: %s", k, exc)
                trace.stop_reason = "linesearch_failure"
                break
            # retry once along steepest descent before giving up
            eta = -g
            slope = -gg
            cache.clear()
            try:
                t, f_new = armijo_linesearch(phi, f, slope, opts)
            except (LineSearchFailure, NumericalError) as exc2:
                log.info("line search failed at iteration %d: %s", k, exc2)
                trace.stop_reason = "linesearch_failure"
                break

        Y_new = cache[t]
        _, eg = cost_and_egrad(Y_new)
        g_new = mf.egrad_to_rgrad(Y_new, eg, cfg)
        gg_new = mf.fisher_inner(Y_new, g_new, g_new)

        if opts.beta_rule == "steepest":
            eta = -g_new
        else:
            g_old_t = mf.transport(Y_new, g, cfg)
            beta = _beta(opts.beta_rule, Y_new, g_new, g_old_t, gg)
            eta = -g_new + beta * mf.transport(Y_new, eta, cfg)

        Y, f, g, gg = Y_new, f_new, g_new, gg_new
        rec = IterRecord(
            k, f, float(np.sqrt(gg)), float(t), 1e3 * (time.perf_counter() - t_start)
        )
        trace.records.append(rec)
        if callback is not None:
            callback(k, Y, rec)
    else:
        trace.stop_reason = "grad_tol" if np.sqrt(gg) < opts.grad_tol else "max_iter"

    if not trace.stop_reason:
        trace.stop_reason = "max_iter"
    return Y, trace


@dataclass(frozen=True)
class CurriculumSchedule:
    """Increasing vocabulary sizes; each stage runs ``iters_per_stage`` iterations."""

    stages: tuple
    iters_per_stage: int = 150

    def __post_init__(self):
        stages = tuple(int(s) for s in self.stages)
        if not stages:
            raise ValueError("schedule needs at least one stage")
        if stages[0] < 2:
            raise ValueError("stage sizes must be >= 2")
        if any(b <= a for a, b in zip(stages, stages[1:])):
            raise ValueError(f"stages must be strictly increasing: {stages}")
        if self.iters_per_stage < 0:
            raise ValueError("iters_per_stage must be >= 0")
        object.__setattr__(self, "stages", stages)

    @classmethod
    def doubling(cls, n, start=250, iters_per_stage=150):
        """``start, 2*start, 4*start, ...`` capped by and ending at ``n``."""
        stages = []
        s = start
        while s < n:
            stages.append(s)
            s *= 2
        stages.append(n)
        return cls(tuple(stages), iters_per_stage)

    @classmethod
    def full_scale(cls, iters_per_stage=150):
        """Large-scale preset growing from 1000 to 20000 words."""
        return cls.doubling(20000, start=1000, iters_per_stage=iters_per_stage)


def warm_start_expand(Y_small, n_new, cfg=mf.DEFAULT_CONFIG):
    """Embed an ``m x m`` solution into an ``n_new x n_new`` starting point.

    The old solution, scaled by ``m / n_new``, occupies the top-left block;
    every other entry is ``1 / n_new``. The block matrix already has unit
    marginals; a Sinkhorn pass removes round-off.
    """
    Y_small = np.asarray(Y_small, dtype=np.float64)
    m = Y_small.shape[0]
    if n_new <= m:
        raise ValueError(f"n_new ({n_new}) must exceed the current size ({m})")
    Y = np.full((n_new, n_new), 1.0 / n_new)
    Y[:m, :m] = Y_small * (m / n_new)
    return mf.sinkhorn_project(Y, cfg)


def initial_point(n, init_scale=0.01, seed=0, cfg=mf.DEFAULT_CONFIG):
    """Barycenter nudged along a random tangent direction of Fisher norm ``init_scale``."""
    Y = mf.uniform_point(n)
    if init_scale == 0:
        return Y
    xi = mf.random_tangent(Y, init_scale, substream(seed, "init"), cfg)
    return mf.retract(Y, xi, 1.0, cfg)


def _mba_total_and_egrad(Y, Cx, Cz):
    value, grad = mba_value_and_egrad(Y, Cx, Cz)
    return value.total, grad


def _vectors(E):
    return np.asarray(getattr(E, "vectors", E), dtype=np.float64)


def curriculum_align(
    X,
    Z,
    schedule,
    opts=RcgOptions(),
    init_scale=0.01,
    seed=0,
    Y0=None,
    callback=None,
):
    """Learn the alignment on growing frequency prefixes of both vocabularies.

    Stage ``k`` optimizes the bi-directional covariance objective restricted
    to the first ``stages[k]`` words of ``X`` and ``Z`` for
    ``schedule.iters_per_stage`` iterations, starting from the expanded
    stage ``k - 1`` solution. The first stage starts from ``Y0`` if given,
    otherwise from :func:`initial_point`.

    Parameters
    ----------
    X, Z : array of shape (n, d) or EmbeddingMatrix
        Frequency-ordered source and target embeddings.

    Returns
    -------
    Y : ndarray, shape (stages[-1], stages[-1])
    traces : list of OptimTrace, one per stage
    """
    X = _vectors(X)
    Z = _vectors(Z)
    if schedule.stages[-1] > min(X.shape[0], Z.shape[0]):
        raise ValueError(
            f"largest stage {schedule.stages[-1]} exceeds vocabulary sizes "
            f"{X.shape[0]}, {Z.shape[0]}"
        )
    stage_opts = dataclasses.replace(opts, max_iter=schedule.iters_per_stage)
    cfg = opts.manifold
    Y = None
    traces = []
    for i, n_k in enumerate(schedule.stages):
        Cx = CovarianceOperator(X[:n_k])
        Cz = CovarianceOperator(Z[:n_k])
        if Y is None:
            Y = np.array(Y0, dtype=np.float64) if Y0 is not None else initial_point(
                n_k, init_scale, seed, cfg
            )
        else:
            Y = warm_start_expand(Y, n_k, cfg)

        Y, trace = rcg_minimize(
            lambda A: mba_objective(A, Cx, Cz).total,
            lambda A: _mba_total_and_egrad(A, Cx, Cz),
            Y,
            stage_opts,
            callback=callback,
        )
        trace.stage = i
        traces.append(trace)
        log.info(
            "stage %d (n=%d): %d steps, objective %.6g, |grad| %.3g, %s",
            i, n_k, trace.accepted_steps, trace.records[-1].objective,
            trace.final_grad_norm, trace.stop_reason,
        )
    return Y, traces
