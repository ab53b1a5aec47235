"""Command line entry point: ``ihtlab scaling|stability|demo``.

Exit status is 0 on success, 1 on a configuration error and 2 when any
grid point failed (the failed rows are still written, marked in ``status``).
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .experiments import ConfigError, emit_csv, emit_plot, load_config, run
from .linalg import support_of
from .losses import LossModel
from .risk import excess_risk
from .solver import IhtConfig, iht_run
from .stability import support_overlap
from .synth import GenerativeSpec, ModelKind, generate

EXIT_OK, EXIT_CONFIG, EXIT_FAILED_ROWS = 0, 1, 2


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ihtlab", description="IHT simulation sweeps and diagnostics.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value or JSON config file")
    common.add_argument("--out", help="output directory (default: config output_dir)")
    common.add_argument("--seed", type=_u64)
    common.add_argument("--threads", type=_positive)

    for name, presets, helptext in (
            ("scaling", ("desk", "paper-6.1"), "excess risk against sparsity level"),
            ("stability", ("desk", "paper-6.2"), "excess risk against the signal gap")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--preset", default="desk", choices=presets)
        p.add_argument("--format", default="csv", choices=("csv", "csv+svg"))
        p.add_argument("--timings", action="store_true",
                       help="record wall_time in the CSV (output no longer reproducible)")

    d = sub.add_parser("demo", help="one IHT fit on a small sparse linear model")
    d.add_argument("--seed", type=_u64, default=0)
    d.add_argument("--p", type=_positive, default=50)
    d.add_argument("--k-bar", type=_positive, default=5)
    d.add_argument("--n", type=_positive, default=200)
    d.add_argument("--sigma", type=float, default=0.5)
    return parser


def _sweep(args, out) -> int:
    try:
        cfg = load_config(args.command, args.preset, path=args.config,
                          seed=args.seed, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = args.out or cfg.output_dir
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        print(f"cannot create {out_dir}: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    result = run(cfg)
    csv_path = os.path.join(out_dir, f"{args.command}.csv")
    emit_csv(result, csv_path, timings=args.timings)
    print(f"wrote {csv_path} ({len(result.rows)} rows)", file=out)
    if args.format == "csv+svg":
        svg_path = os.path.join(out_dir, f"{args.command}.svg")
        emit_plot(result, svg_path)
        print(f"wrote {svg_path}", file=out)

    label = "log excess" if args.command == "stability" else "excess"
    for n, rho in result.trend().items():
        print(f"n={n}: rank correlation of {label} risk with grid = {rho:.3f}", file=out)
    if result.failures:
        print(f"{result.failures} grid point(s) failed; see the status column", file=sys.stderr)
        return EXIT_FAILED_ROWS
    return EXIT_OK


def _demo(args, out) -> int:
    if not 1 <= args.k_bar < args.p or args.sigma < 0:
        print("config error: need 1 <= k_bar < p and sigma >= 0", file=sys.stderr)
        return EXIT_CONFIG
    spec = GenerativeSpec.sparse(ModelKind.LINEAR_GAUSSIAN, args.p, args.k_bar,
                                 sigma=args.sigma, seed=args.seed)
    data = generate(spec, args.n)
    trace = iht_run(data, LossModel.SQUARED, IhtConfig(k=args.k_bar, refit=True, seed=args.seed))
    er = excess_risk(trace.final, spec, args.k_bar)
    exact, jac = support_overlap(support_of(trace.final), support_of(spec.w_bar))
    print(f"p={args.p} k_bar={args.k_bar} n={args.n} sigma={args.sigma:g} eta={trace.eta:.4g}",
          file=out)
    print(f"iterations: {trace.iterations}  min margin: {trace.min_margin:.4g}", file=out)
    print(f"support recovered: {exact} (jaccard {jac:.3f})", file=out)
    print(f"excess risk: {er.value:.6g}", file=out)
    print(f"||w - w_bar||: {np.linalg.norm(trace.final - spec.w_bar):.6g}", file=out)
    return EXIT_OK


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    args = build_parser().parse_args(argv)
    if args.command == "demo":
        return _demo(args, out)
    return _sweep(args, out)


if __name__ == "__main__":
    sys.exit(main())
