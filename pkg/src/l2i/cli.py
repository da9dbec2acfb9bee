"""Command-line front end: run suites, generate data, evaluate, project."""

from __future__ import annotations

import argparse
import sys

from . import data as dat
from . import model as mdl
from . import suite as ste
from . import trainer as trn
from .config import default_config, parse_config, with_overrides


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="l2i", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the variant suite and write result tables")
    run.add_argument("--config", help="experiment config file (defaults used when omitted)")
    run.add_argument("--out", help="output directory (overrides config)")
    run.add_argument("--seed", type=int, help="override master seed")
    run.add_argument("--variants", help="comma-separated variant names")
    run.add_argument("--runs", type=int, help="override number of runs per variant")

    gen = sub.add_parser("generate-data", help="write a seeded dataset CSV")
    gen.add_argument("--config", help="experiment config file")
    gen.add_argument("--out", required=True, help="output CSV path")
    gen.add_argument("--seed", type=int, help="override dataset seed")

    ev = sub.add_parser("eval", help="score a checkpoint on a dataset CSV")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True, help="dataset CSV path")
    ev.add_argument("--domain", choices=["source", "target", "all"], default="all")
    ev.add_argument("--split", choices=["train", "val", "test", "all"], default="test")

    proj = sub.add_parser("project", help="write 2D latent coordinates for plotting")
    proj.add_argument("--checkpoint", required=True)
    proj.add_argument("--data", required=True, help="dataset CSV path")
    proj.add_argument("--out", required=True, help="output CSV path")
    proj.add_argument("--split", choices=["train", "val", "test", "all"], default="all")

    return parser


def _load_config(path):
    return parse_config(path) if path else default_config()


def _cmd_run(args) -> int:
    cfg = _load_config(args.config)
    variants = None
    if args.variants:
        variants = [trn.parse_variant(p.strip()) for p in args.variants.split(",") if p.strip()]
    cfg = with_overrides(cfg, seed=args.seed, variants=variants, n_runs=args.runs, output_dir=args.out)
    summary = ste.run_suite(cfg)
    for variant, fails in summary["failures"].items():
        for run_index, message in fails:
            print(f"warning: {variant} run {run_index} failed: {message}", file=sys.stderr)
    print(f"results written to {summary['output_dir']}")
    if summary["fully_failed"]:
        print(f"error: no completed runs for: {', '.join(summary['fully_failed'])}", file=sys.stderr)
        return 1
    return 0


def _cmd_generate_data(args) -> int:
    cfg = _load_config(args.config)
    ds = cfg.dataset if args.seed is None else dat.with_seed(cfg.dataset, args.seed)
    dat.write_dataset_csv(args.out, dat.generate_dataset(ds))
    print(f"dataset written to {args.out}")
    return 0


def _filter_samples(samples, split):
    return samples if split == "all" else [s for s in samples if s.split == split]


def _cmd_eval(args) -> int:
    params, _ = mdl.load_checkpoint(args.checkpoint)
    samples = _filter_samples(dat.read_dataset_csv(args.data), args.split)
    scores = trn.evaluate(params, samples, args.domain)
    print(
        f"domain={args.domain} split={args.split} n={scores.n_samples} "
        f"accuracy={scores.accuracy:.4f} kappa={scores.kappa:.4f} auroc={scores.auroc:.4f}"
    )
    return 0


def _cmd_project(args) -> int:
    params, _ = mdl.load_checkpoint(args.checkpoint)
    samples = _filter_samples(dat.read_dataset_csv(args.data), args.split)
    ste.dump_latent_projection(params, samples, args.out)
    print(f"projection written to {args.out}")
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "generate-data": _cmd_generate_data,
    "eval": _cmd_eval,
    "project": _cmd_project,
}


def cli_main(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))
