"""Command-line entry point: ``mbalign {align,evaluate,gen-synthetic,benchmark}``.

Options resolve in three layers: built-in defaults (optionally a preset),
then a JSON config file, then explicit command-line flags. A run manifest
written by ``align`` is itself a valid config file.

Exit status is 0 on success, 1 on usage errors, 2 on data errors and 3 on
numerical failures.
"""
import argparse
import dataclasses
import json
import logging
import os
import platform
import sys
import time
from dataclasses import dataclass

import numpy as np
import scipy
from threadpoolctl import threadpool_limits

from . import __version__
from . import ds_manifold as mf
from .benchmark import format_table, run_benchmark
from .data_io import (
    BilingualDictionary,
    EmbeddingMatrix,
    load_dictionary,
    load_embeddings,
    normalize_embeddings,
    save_dictionary,
    save_embeddings,
)
from .errors import AlignmentError, DataError, NumericalError
from .gw_baseline import GwOptions, gw_align, gw_sweep
from .inference import evaluate_bli, write_ranked_pairs
from .objective import CovarianceOperator
from .optimizer import CurriculumSchedule, RcgOptions, curriculum_align
from .procrustes import load_matrix, procrustes_solve, save_matrix
from .synthetic import gen_synthetic

log = logging.getLogger("mbalign")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


@dataclass
class RunConfig:
    """Every setting of an ``align`` run. Field names double as config-file keys."""

    method: str = "mba"
    source: str = ""
    target: str = ""
    out_dir: str = "run"
    train_vocab: int = 2000
    center: bool = False
    stages: list = None
    curriculum_start: int = 250
    iters_per_stage: int = 150
    init_scale: float = 0.01
    grad_tol: float = 1e-6
    armijo_c1: float = 1e-4
    backtrack_factor: float = 0.5
    initial_step: float = 1.0
    beta_rule: str = "polak-ribiere+"
    restart_every: int = 100
    projection_solver: str = "dense"
    gw_epsilon: float = 5e-3
    gw_epsilons: list = None
    gw_outer_iters: int = 50
    gw_rescale: bool = True
    hard_procrustes: bool = False
    csls_k: int = 10
    seed: int = 0
    threads: int = None
    text_matrix: bool = False

    def __post_init__(self):
        if self.method not in ("mba", "gw"):
            raise ValueError(f"method must be 'mba' or 'gw', got {self.method!r}")
        if self.train_vocab < 2:
            raise ValueError("train_vocab must be >= 2")
        if self.csls_k < 1:
            raise ValueError("csls_k must be >= 1")

    def schedule(self):
        if self.stages:
            return CurriculumSchedule(tuple(self.stages), self.iters_per_stage)
        return CurriculumSchedule.doubling(self.train_vocab, self.curriculum_start, self.iters_per_stage)

    def rcg_options(self):
        return RcgOptions(
            grad_tol=self.grad_tol,
            armijo_c1=self.armijo_c1,
            backtrack_factor=self.backtrack_factor,
            initial_step=self.initial_step,
            beta_rule=self.beta_rule,
            restart_every=self.restart_every,
            manifold=mf.ManifoldConfig(projection_solver=self.projection_solver),
        )

    def gw_options(self):
        return GwOptions(
            epsilon=self.gw_epsilon, outer_iters=self.gw_outer_iters,
            rescale_covariances=self.gw_rescale,
        )


PRESETS = {
    "desk": {},
    # top 20000 words, curriculum grown from 1000
    "full-scale": {"train_vocab": 20000, "curriculum_start": 1000},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv(kind):
    def parse(text):
        try:
            return [kind(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected comma-separated {kind.__name__} values") from None
    return parse


def _flag(p, name, **kw):
    # SUPPRESS keeps unset flags out of the namespace so file values survive
    p.add_argument(name, default=argparse.SUPPRESS, **kw)


def build_parser():
    parser = _Parser(prog="mbalign", description="Unsupervised word-translation alignment.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("align", help="learn an alignment and the orthogonal mapping")
    a.add_argument("--config", help="JSON config file or run manifest")
    a.add_argument("--preset", choices=sorted(PRESETS), help="named default settings")
    _flag(a, "--method", choices=("mba", "gw"))
    _flag(a, "--source", help="source embeddings, text vector format")
    _flag(a, "--target", help="target embeddings, text vector format")
    _flag(a, "--out-dir", dest="out_dir")
    _flag(a, "--train-vocab", dest="train_vocab", type=int)
    _flag(a, "--center", action="store_true", help="mean-center before unit normalization")
    _flag(a, "--stages", type=_csv(int), help="comma-separated curriculum sizes")
    _flag(a, "--curriculum-start", dest="curriculum_start", type=int)
    _flag(a, "--iters-per-stage", dest="iters_per_stage", type=int)
    _flag(a, "--init-scale", dest="init_scale", type=float)
    _flag(a, "--grad-tol", dest="grad_tol", type=float)
    _flag(a, "--armijo-c1", dest="armijo_c1", type=float)
    _flag(a, "--backtrack-factor", dest="backtrack_factor", type=float)
    _flag(a, "--initial-step", dest="initial_step", type=float)
    _flag(a, "--beta-rule", dest="beta_rule", choices=("polak-ribiere+", "fletcher-reeves", "steepest"))
    _flag(a, "--restart-every", dest="restart_every", type=int)
    _flag(a, "--projection-solver", dest="projection_solver", choices=("dense", "cg"))
    _flag(a, "--gw-epsilon", dest="gw_epsilon", type=float)
    _flag(a, "--gw-epsilons", dest="gw_epsilons", type=_csv(float), help="sweep; keeps the lowest GW objective")
    _flag(a, "--gw-outer-iters", dest="gw_outer_iters", type=int)
    _flag(a, "--no-gw-rescale", dest="gw_rescale", action="store_false")
    _flag(a, "--hard-procrustes", dest="hard_procrustes", action="store_true",
          help="round the alignment to a permutation before Procrustes")
    _flag(a, "--csls-k", dest="csls_k", type=int)
    _flag(a, "--seed", type=int)
    _flag(a, "--threads", type=int)
    _flag(a, "--text-matrix", dest="text_matrix", action="store_true", help="also write W.txt")

    e = sub.add_parser("evaluate", help="CSLS word-translation precision of a mapping")
    e.add_argument("--matrix", required=True, help="mapping written by align")
    e.add_argument("--source", required=True)
    e.add_argument("--target", required=True)
    e.add_argument("--dictionary", required=True, help="'source target' pairs, one per line")
    e.add_argument("--csls-k", type=int, default=10)
    e.add_argument("--max-vocab", type=int, default=None, help="words loaded per language (default all)")
    e.add_argument("--center", action="store_true")
    e.add_argument("--out", help="write the metric record here as well")
    e.add_argument("--ranked-pairs", help="write retrieved candidates as TSV")
    e.add_argument("--threads", type=int)

    g = sub.add_parser("gen-synthetic", help="write a planted-permutation fixture")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--window", type=float, default=None,
                   help="limit how far the permutation moves each frequency rank")
    g.add_argument("--out-dir", required=True)

    b = sub.add_parser("benchmark", help="time objective+gradient kernels over an (n, d) grid")
    b.add_argument("--ns", type=_csv(int), default=[256, 512, 1024])
    b.add_argument("--ds", type=_csv(int), default=[64])
    b.add_argument("--methods", type=_csv(str), default=["mba", "gw"])
    b.add_argument("--repeats", type=int, default=20)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", help="write the table here as well")
    b.add_argument("--threads", type=int)
    return parser


def resolve_config(args):
    """Merge preset, config file and explicit flags into a :class:`RunConfig`."""
    values = dict(PRESETS[args.preset]) if args.preset else {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            try:
                loaded = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(loaded, dict):
            raise DataError(f"{args.config}: expected a JSON object")
        if "config" in loaded and isinstance(loaded["config"], dict):
            loaded = loaded["config"]
        known = {f.name for f in dataclasses.fields(RunConfig)}
        unknown = sorted(set(loaded) - known)
        if unknown:
            raise ValueError(f"{args.config}: unknown config keys {unknown}")
        values.update(loaded)
    skip = {"command", "config", "preset", "verbose"}
    values.update({k: v for k, v in vars(args).items() if k not in skip})
    cfg = RunConfig(**values)
    if not cfg.source or not cfg.target:
        raise ValueError("align needs --source and --target (flags or config file)")
    return cfg


def _versions():
    return {
        "mbalign": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def cmd_align(cfg):
    timings = {}
    t0 = time.perf_counter()
    X = normalize_embeddings(load_embeddings(cfg.source, cfg.train_vocab), center=cfg.center)
    Z = normalize_embeddings(load_embeddings(cfg.target, cfg.train_vocab), center=cfg.center)
    if X.d != Z.d:
        raise DataError(f"embedding dimensions differ: {X.d} vs {Z.d}")
    n = min(X.n, Z.n)
    if n < cfg.train_vocab:
        log.warning("training on %d words; fewer than train_vocab=%d available", n, cfg.train_vocab)
    Xn, Zn = X.vectors[:n], Z.vectors[:n]
    timings["load_s"] = time.perf_counter() - t0

    t1 = time.perf_counter()
    summary = {}
    if cfg.method == "mba":
        schedule = cfg.schedule()
        if schedule.stages[-1] != n:
            stages = tuple(s for s in schedule.stages if s < n) + (n,)
            schedule = CurriculumSchedule(stages, schedule.iters_per_stage)
        Y, traces = curriculum_align(Xn, Zn, schedule, cfg.rcg_options(), cfg.init_scale, cfg.seed)
        trace_text = "".join(tr.to_jsonl() for tr in traces)
        summary["stages"] = [
            {"n": tr.n, "steps": tr.accepted_steps, "objective": tr.records[-1].objective,
             "grad_norm": tr.final_grad_norm, "stop_reason": tr.stop_reason}
            for tr in traces
        ]
    else:
        Cx, Cz = CovarianceOperator(Xn), CovarianceOperator(Zn)
        if cfg.gw_epsilons:
            res = gw_sweep(Cx, Cz, tuple(cfg.gw_epsilons), cfg.gw_options())
        else:
            res = gw_align(Cx, Cz, cfg.gw_options())
        Y = res.Y
        trace_text = "".join(
            json.dumps({"iteration": i, "objective": v, "epsilon": res.epsilon}) + "\n"
            for i, v in enumerate(res.objectives)
        )
        summary["epsilon"] = res.epsilon
        summary["gw_objective"] = res.objectives[-1]
    timings["align_s"] = time.perf_counter() - t1

    t2 = time.perf_counter()
    W = procrustes_solve(Xn, Y, Zn, hard=cfg.hard_procrustes)
    timings["procrustes_s"] = time.perf_counter() - t2
    timings["total_s"] = time.perf_counter() - t0

    os.makedirs(cfg.out_dir, exist_ok=True)
    artifacts = {"matrix": "W.bin", "trace": "trace.jsonl", "manifest": "manifest.json"}
    save_matrix(os.path.join(cfg.out_dir, "W.bin"), W, binary=True)
    if cfg.text_matrix:
        save_matrix(os.path.join(cfg.out_dir, "W.txt"), W, binary=False)
        artifacts["matrix_text"] = "W.txt"
    with open(os.path.join(cfg.out_dir, "trace.jsonl"), "w", encoding="utf-8") as fh:
        fh.write(trace_text)
    manifest = {
        "config": dataclasses.asdict(cfg),
        "versions": _versions(),
        "timings": timings,
        "train_words": n,
        "dim": X.d,
        "summary": summary,
        "artifacts": artifacts,
    }
    with open(os.path.join(cfg.out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    print(f"{cfg.method}: aligned {n} words in {timings['align_s']:.2f}s; wrote {cfg.out_dir}/W.bin")
    return manifest


def cmd_evaluate(args):
    W = load_matrix(args.matrix)
    X = normalize_embeddings(load_embeddings(args.source, args.max_vocab), center=args.center)
    Z = normalize_embeddings(load_embeddings(args.target, args.max_vocab), center=args.center)
    dictionary = load_dictionary(args.dictionary, X.vocab, Z.vocab)
    report = evaluate_bli(W, X, Z, dictionary, k=args.csls_k)
    record = report.to_record()
    sys.stdout.write(record)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(record)
    if args.ranked_pairs:
        write_ranked_pairs(args.ranked_pairs, report, Z)
    return report


def cmd_gen_synthetic(args):
    if args.n < 4 or args.d < 2:
        raise ValueError("gen-synthetic needs n >= 4 and d >= 2")
    X, Z, perm = gen_synthetic(args.n, args.d, args.noise, args.seed, args.window)
    os.makedirs(args.out_dir, exist_ok=True)
    src = EmbeddingMatrix(tuple(f"s{i}" for i in range(args.n)), X)
    tgt = EmbeddingMatrix(tuple(f"t{j}" for j in range(args.n)), Z)
    save_embeddings(os.path.join(args.out_dir, "src.vec"), src)
    save_embeddings(os.path.join(args.out_dir, "tgt.vec"), tgt)
    pairs = BilingualDictionary((f"s{i}", f"t{int(perm[i])}") for i in range(args.n))
    save_dictionary(os.path.join(args.out_dir, "dict.txt"), pairs)
    print(f"wrote src.vec, tgt.vec, dict.txt ({args.n} words, d={args.d}) to {args.out_dir}")
    return X, Z, perm


def cmd_benchmark(args):
    rows = run_benchmark(args.ns, args.ds, tuple(args.methods), args.repeats, args.seed)
    table = format_table(rows)
    sys.stdout.write(table)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(table)
    return rows


class _UsageError(Exception):
    pass


def _dispatch(args):
    if args.command == "align":
        try:
            cfg = resolve_config(args)
        except (ValueError, TypeError) as exc:
            raise _UsageError(str(exc)) from None
        with threadpool_limits(limits=cfg.threads):
            cmd_align(cfg)
        return
    handler = {"evaluate": cmd_evaluate, "gen-synthetic": cmd_gen_synthetic, "benchmark": cmd_benchmark}
    with threadpool_limits(limits=getattr(args, "threads", None)):
        handler[args.command](args)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        _dispatch(args)
    except _UsageError as exc:
        print(f"mbalign: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"mbalign: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"mbalign: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except AlignmentError as exc:
        print(f"mbalign: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"mbalign: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
