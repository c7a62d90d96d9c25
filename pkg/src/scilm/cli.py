"""Command-line entry point: ``scilm <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .config import load_run_config, load_synthetic_spec
from .data import SyntheticSpec, class_stats, load_dataset, make_synthetic_longtail, save_dataset
from .errors import ConfigurationError, ContractViolation, DatasetError, EvaluationError, NumericalError
from .evaluation import gzsc_metrics, tzsc_accuracy, write_similarity_matrix
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .sampler import make_rng
from .train import GRADCHECK_CONFIG, gradcheck, train, train_baseline_dem

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4
COMPARE_VARIANTS = ("dem", "a", "b", "c")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _pct(x: float) -> str:
    return f"{100.0 * x:.1f}"


# --- generate -------------------------------------------------------------------

def cmd_generate(args) -> int:
    spec = load_synthetic_spec(args.spec) if args.spec else SyntheticSpec()
    overrides = {
        f.name: getattr(args, f.name)
        for f in fields(SyntheticSpec)
        if getattr(args, f.name, None) is not None
    }
    spec = replace(spec, **overrides)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        print(f"error: {out} is not empty (use --force to overwrite)", file=sys.stderr)
        return EXIT_USAGE
    ds = make_synthetic_longtail(spec)
    save_dataset(ds, out)
    stats = class_stats(ds)
    print(f"wrote {ds.n_instances} instances, {len(ds.seen_classes)} seen / "
          f"{len(ds.unseen_classes)} unseen classes to {out} (count std {stats.std:.2f})")
    return EXIT_OK


# --- stats ----------------------------------------------------------------------

def cmd_stats(args) -> int:
    ds = load_dataset(args.data)
    stats = class_stats(ds)
    out = Path(args.out) if args.out else Path(args.data)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "class_counts.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "class_id", "class_name", "count"])
        for rank, (c, n) in enumerate(stats.sorted_counts):
            w.writerow([rank, c, ds.class_name(c), n])
    print("class_id  count")
    for c, n in stats.sorted_counts:
        print(f"{ds.class_name(c):>8}  {n}")
    print(f"std {stats.std:.4f}")
    return EXIT_OK


# --- train ----------------------------------------------------------------------

def _config_for(args, ds) -> ModelConfig:
    config = load_run_config(args.config)[0] if args.config else ModelConfig()
    config = config.for_dataset(ds)
    for key in ("variant", "iterations", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            config = replace(config, **{key: value})
    config.validate()
    return config


def cmd_train(args) -> int:
    ds = load_dataset(args.data)
    config = _config_for(args, ds)
    rng = make_rng(config.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.baseline == "dem":
        sen, report = train_baseline_dem(ds, config, rng)
        save_checkpoint(out, config, sen, None, variant="dem")
    else:
        sen, shared, report = train(ds, config, rng)
        save_checkpoint(out, config, sen, shared)
    report.write_loss_curve(out.parent / "loss_curve.csv")
    if report.losses:
        last = report.losses[-1]
        print(f"iterations {report.iterations}  l1 {last.l1:.6f}  l2 {last.l2:.6f}  "
              f"l3 {last.l3:.6f}  reg {last.reg:.6f}  total {last.total:.6f}")
    else:
        print("iterations 0")
    return EXIT_OK


# --- eval -----------------------------------------------------------------------

def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.model)
    ds = load_dataset(args.data)
    if (ckpt.config.q, ckpt.config.p) != (ds.q, ds.p):
        raise DatasetError(f"checkpoint expects q={ckpt.config.q}, p={ckpt.config.p}; "
                           f"dataset has q={ds.q}, p={ds.p}")
    if args.mode == "tzsc":
        result = tzsc_accuracy(ckpt.sen, ds, args.distance)
        print(f"T {_pct(result.T)}")
    else:
        result = gzsc_metrics(ckpt.sen, ds, args.distance)
        print(f"u {_pct(result.u)}  s {_pct(result.s)}  H {_pct(result.H)}")
    out = Path(args.out) if args.out else Path(args.model).parent
    result.write(out, ds)
    if args.similarity:
        write_similarity_matrix(ds, out / "similarity_matrix.csv")
    return EXIT_OK


# --- gradcheck ------------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    worst = 0.0
    for variant in ("a", "b", "c"):
        report = gradcheck(replace(GRADCHECK_CONFIG, variant=variant), make_rng(args.seed))
        worst = max(worst, report.max_rel_error)
        detail = "  ".join(f"{k} {v:.2e}" for k, v in report.per_parameter.items())
        print(f"variant {variant}: max rel error {report.max_rel_error:.3e}  ({detail})")
    print(f"max relative error {worst:.3e}")
    return EXIT_OK if worst < GRADCHECK_TOL else EXIT_NUMERIC


# --- compare --------------------------------------------------------------------

def run_variant(ds, config: ModelConfig, variant: str, seed: int) -> tuple[str, int, float, float, float]:
    """Train one (variant, seed) job and return its GZSC ``(u, s, H)`` row."""
    rng = make_rng(seed)
    if variant == "dem":
        sen, _ = train_baseline_dem(ds, replace(config, seed=seed), rng)
    else:
        sen, _, _ = train(ds, replace(config, variant=variant, seed=seed), rng)
    r = gzsc_metrics(sen, ds)
    return variant, seed, r.u, r.s, r.H


def _run_job(job):
    return run_variant(*job)


def compare(ds, config: ModelConfig, seeds: list[int], threads: int = 1) -> list[tuple]:
    jobs = [(ds, config, v, s) for s in seeds for v in COMPARE_VARIANTS]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_run_job, jobs))
    else:
        rows = [_run_job(job) for job in jobs]
    for v in COMPARE_VARIANTS:
        mine = np.array([r[2:] for r in rows if r[0] == v])
        rows.append((v, "mean", *mine.mean(axis=0)))
    return rows


def cmd_compare(args) -> int:
    ds = load_dataset(args.data)
    config = _config_for(args, ds)
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise ConfigurationError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from None
    threads = int(os.environ.get("SCILM_THREADS", os.cpu_count() or 1))
    rows = compare(ds, config, seeds, threads=max(1, threads))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "seed", "u", "s", "H"])
        for v, seed, u, s, h in rows:
            w.writerow([v, seed, repr(float(u)), repr(float(s)), repr(float(h))])
    for v, seed, u, s, h in rows:
        print(f"{v:>4} {seed!s:>5}  u {_pct(u)}  s {_pct(s)}  H {_pct(h)}")
    return EXIT_OK


# --- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scilm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic long-tailed dataset")
    g.add_argument("--spec", help="key = value file with SyntheticSpec fields")
    g.add_argument("--out", required=True)
    g.add_argument("--force", action="store_true")
    for f in fields(SyntheticSpec):
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("bool", bool):
            g.add_argument(flag, dest=f.name, type=lambda s: s.lower() in ("1", "true", "yes", "on"))
        else:
            kind = float if f.type in ("float", float) else int
            g.add_argument(flag, dest=f.name, type=kind)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("stats", help="per-class training counts")
    s.add_argument("--data", required=True)
    s.add_argument("--out", help="directory for class_counts.csv (default: the data directory)")
    s.set_defaults(func=cmd_stats)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--variant", choices=("a", "b", "c"))
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--baseline", choices=("dem",))
    t.add_argument("--iterations", type=int)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--mode", choices=("tzsc", "gzsc"), default="gzsc")
    e.add_argument("--distance", choices=("euclidean", "cosine"), default="euclidean")
    e.add_argument("--out", help="directory for metrics files (default: next to the model)")
    e.add_argument("--similarity", action="store_true", help="also write similarity_matrix.csv")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="tape gradients vs finite differences")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)

    m = sub.add_parser("compare", help="baseline vs a/b/c over several seeds")
    m.add_argument("--data", required=True)
    m.add_argument("--config")
    m.add_argument("--seeds", default="0,1,2,3,4")
    m.add_argument("--out", required=True)
    m.add_argument("--iterations", type=int)
    m.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, ContractViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, EvaluationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
