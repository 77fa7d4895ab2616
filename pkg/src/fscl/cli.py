"""Command-line entry point.

Subcommands: run, gen-teacher, validate-bundle, report.
Global flags: --seed, --out, --quiet.
Exit codes: 0 success, 1 usage/config, 2 data/bundle, 3 runtime
(validate-bundle exits 1 whenever violations are found, printing one per line).
"""

import argparse
import sys
from pathlib import Path

from .bundle import (
    load_bundle,
    synthetic_teacher,
    teacher_top1_accuracy,
    validate_bundle,
    write_bundle,
)
from .config import parse_config, validate_config
from .data import open_dataset
from .errors import (
    BundleError,
    ConfigError,
    DataError,
    DimensionError,
    FsclError,
    ProtocolError,
    UsageError,
)
from .experiment import run_experiment
from .report import render_report


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _exit_code(exc):
    if isinstance(exc, (ConfigError, UsageError, DimensionError)):
        return 1
    if isinstance(exc, (BundleError, DataError, ProtocolError)):
        return 2
    return 3


def build_parser():
    parser = _Parser(prog="fscl",
                     description="Few-shot continual learning under a frozen teacher")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed / seed for gen-teacher")
    parser.add_argument("--out", default=None,
                        help="override the output directory or file")
    parser.add_argument("--quiet", action="store_true",
                        help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment from a config file")
    p_run.add_argument("-c", "--config", required=True, help="key=value config file")

    p_gen = sub.add_parser("gen-teacher", help="write a synthetic teacher bundle")
    p_gen.add_argument("--dataset", required=True,
                       help="dataset directory or blobs:... spec")
    p_gen.add_argument("--quality", type=float, required=True,
                       help="teacher quality in [0, 1]")
    p_gen.add_argument("--scale-dims", default="32,32,32",
                       help="comma-separated per-scale feature dims")
    p_gen.add_argument("--embed-dim", type=int, default=32)
    p_gen.add_argument("--margin", type=float, default=10.0)

    p_val = sub.add_parser("validate-bundle", help="check a bundle file")
    p_val.add_argument("--bundle", required=True)
    p_val.add_argument("--config", default=None,
                       help="optional experiment config to check dims against")

    p_rep = sub.add_parser("report", help="summarize a run directory")
    p_rep.add_argument("--run-dir", required=True)
    p_rep.add_argument("--reference", default=None,
                       help="final accuracy to diff against: a number or a run dir")
    p_rep.add_argument("--no-figures", action="store_true",
                       help="skip png rendering")
    return parser


def cmd_run(args):
    cfg = validate_config(parse_config(args.config))
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    log = (lambda msg: None) if args.quiet else (lambda msg: print(msg))
    out_dir = Path(cfg.out_dir)
    try:
        result = run_experiment(cfg, log=log)
    except Exception as exc:
        if out_dir.is_dir():
            (out_dir / "ERROR").write_text(f"{type(exc).__name__}: {exc}\n",
                                           encoding="utf-8")
        raise
    report = result.report
    log(f"Avg: {report.avg:.2f}  KR: {report.kr:.2f}" +
        ("" if report.delta_final is None else f"  DeltaFinal: {report.delta_final:.2f}"))
    log(f"outputs: {result.out_dir}")
    return 0


def cmd_gen_teacher(args):
    if args.out is None:
        raise ConfigError("gen-teacher: --out <bundle path> is required")
    dataset = open_dataset(args.dataset)
    scale_dims = [int(v) for v in args.scale_dims.split(",") if v.strip()]
    seed = 0 if args.seed is None else args.seed
    bundle = synthetic_teacher(dataset, args.quality, scale_dims=scale_dims,
                               embed_dim=args.embed_dim, seed=seed,
                               margin=args.margin)
    write_bundle(args.out, bundle)
    reloaded = load_bundle(args.out)
    problems = validate_bundle(reloaded, class_universe=dataset.class_names)
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        raise BundleError("gen-teacher: written bundle failed validation")
    if not args.quiet:
        acc = teacher_top1_accuracy(reloaded) * 100.0
        print(f"wrote {args.out}: {len(reloaded.records)} records, "
              f"teacher top-1 {acc:.2f}%")
    return 0


def cmd_validate_bundle(args):
    try:
        bundle = load_bundle(args.bundle)
    except FsclError as exc:
        print(str(exc))
        return 1
    expected_scales = None
    class_universe = None
    if args.config is not None:
        cfg = parse_config(args.config)
        expected_scales = cfg.num_scales
        if cfg.dataset:
            class_universe = open_dataset(cfg.dataset).class_names
    problems = validate_bundle(bundle, expected_scales=expected_scales,
                               class_universe=class_universe)
    for p in problems:
        print(p)
    return 1 if problems else 0


def cmd_report(args):
    emit = (lambda msg: None) if args.quiet else (lambda msg: print(msg))
    render_report(args.run_dir, reference=args.reference, emit=emit,
                  figures=not args.no_figures)
    return 0


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {
            "run": cmd_run,
            "gen-teacher": cmd_gen_teacher,
            "validate-bundle": cmd_validate_bundle,
            "report": cmd_report,
        }[args.command]
        return handler(args)
    except FsclError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except KeyboardInterrupt:
        return 3


if __name__ == "__main__":
    sys.exit(main())
