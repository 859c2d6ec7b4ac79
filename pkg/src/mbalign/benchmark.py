"""Per-iteration cost of the objective/gradient kernels over an (n, d) grid."""
import functools
import time
import tracemalloc
from dataclasses import dataclass

import numpy as np

from . import ds_manifold as mf
from .objective import CovarianceOperator, gw_value_and_egrad, mba_value_and_egrad
from .synthetic import substream

__all__ = ["BenchmarkRow", "kernel_flops", "run_benchmark", "format_table", "scaling_ratios"]

COLUMNS = ("method", "n", "d", "millis_per_iter", "cpu_millis_per_iter", "nxn_buffers", "mflops_per_iter")


@dataclass(frozen=True)
class BenchmarkRow:
    method: str
    n: int
    d: int
    millis_per_iter: float
    cpu_millis_per_iter: float
    nxn_buffers: float
    mflops_per_iter: float

    def as_tuple(self):
        return (self.method, self.n, self.d, self.millis_per_iter, self.cpu_millis_per_iter,
                self.nxn_buffers, self.mflops_per_iter)


def kernel_flops(method, n, d):
    """Multiply-add count (2 flops each) of one value-and-gradient evaluation."""
    if method == "mba":
        # X^T Y, Z^T Y^T, final (n, 2d) @ (2d, n); the rest is O(n d^2)
        return 2 * (2 * n * n * d + 2 * n * n * d) + 2 * 8 * n * d * d
    if method == "gw":
        return 2 * (2 * n * n * d) + 2 * 2 * n * d * d
    raise ValueError(f"unknown method {method!r}")


_KERNELS = {"mba": mba_value_and_egrad, "gw": gw_value_and_egrad}


def _random_point(n, rng):
    return mf.sinkhorn_project(rng.random((n, n)) + 0.5)


def _peak_nxn_buffers(fn, n):
    tracemalloc.start()
    try:
        tracemalloc.reset_peak()
        fn()
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    return peak / (8.0 * n * n)


def run_benchmark(ns, ds, methods=("mba", "gw"), repeats=5, seed=0):
    """Time one objective+gradient evaluation per grid cell.

    Timing runs in ``repeats`` rounds, each visiting every grid cell once,
    and a cell reports its best round. Interleaving keeps slow phases of a
    shared host from landing on a single grid size. Rows also carry the
    traced peak of fresh allocations in units of ``n x n`` float64 buffers
    (the gradient buffer is preallocated and excluded) and the analytic
    flop count.
    """
    rng = substream(seed, "benchmark")
    cells = []
    for d in ds:
        for n in ns:
            X = rng.standard_normal((n, d))
            Z = rng.standard_normal((n, d))
            X /= np.linalg.norm(X, axis=1, keepdims=True)
            Z /= np.linalg.norm(Z, axis=1, keepdims=True)
            Cx, Cz = CovarianceOperator(X), CovarianceOperator(Z)
            Y = _random_point(n, rng)
            out = np.empty((n, n))
            for method in methods:
                call = functools.partial(_KERNELS[method], Y, Cx, Cz, out=out)
                call()
                cells.append((method, n, d, call))
    wall = [np.inf] * len(cells)
    cpu = [np.inf] * len(cells)
    for _ in range(repeats):
        for i, (*_, call) in enumerate(cells):
            t0, c0 = time.perf_counter(), time.process_time()
            call()
            c1, t1 = time.process_time(), time.perf_counter()
            wall[i] = min(wall[i], t1 - t0)
            cpu[i] = min(cpu[i], c1 - c0)
    return [
        BenchmarkRow(method, n, d, 1e3 * w, 1e3 * c, round(_peak_nxn_buffers(call, n), 2),
                     kernel_flops(method, n, d) / 1e6)
        for (method, n, d, call), w, c in zip(cells, wall, cpu)
    ]


def format_table(rows):
    out = ["\t".join(COLUMNS)]
    for r in rows:
        out.append(f"{r.method}\t{r.n}\t{r.d}\t{r.millis_per_iter:.4f}\t{r.cpu_millis_per_iter:.4f}"
                   f"\t{r.nxn_buffers:.2f}\t{r.mflops_per_iter:.3f}")
    return "\n".join(out) + "\n"


def scaling_ratios(rows, method, d, clock="wall"):
    """Timing ratio between consecutive grid sizes ``n`` at fixed ``d``.

    ``clock`` picks ``"wall"`` (``millis_per_iter``) or ``"cpu"``
    (``cpu_millis_per_iter``).
    """
    attr = {"wall": "millis_per_iter", "cpu": "cpu_millis_per_iter"}[clock]
    sel = sorted((r.n, getattr(r, attr)) for r in rows if r.method == method and r.d == d)
    return [(n2 / n1, t2 / t1) for (n1, t1), (n2, t2) in zip(sel, sel[1:])]
