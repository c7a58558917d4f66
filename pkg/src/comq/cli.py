"""Command line front end.

One binary with three public subcommands (quantize, eval,
compare-orders) plus a hidden oracle mode that exposes the reference
searches to out-of-process harnesses. Exit codes: 0 on success, 1 when
a job ran but hit a runtime problem (degenerate layers, unreadable
artifacts), 2 for bad usage, bad manifests, or bad config values.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from comq.grid import (
    GRANULARITIES,
    ORDERS,
    SCALE_UPDATES,
    CodeSet,
    InvalidConfigError,
    QuantError,
)
from comq.jobs import JobReport, run_compare_orders, run_eval, run_quantize
from comq.oracle import brute_force_joint, coordinate_argmin, scale_argmin_1d
from comq.tensor_io import ManifestError, TensorFormatError, load_tensor


def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip() != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--bits", type=int, default=None, help="code width in bits")
    parser.add_argument("--granularity", choices=GRANULARITIES, default=None,
                        help="one scale per layer or per output channel")
    parser.add_argument("--order", choices=ORDERS, default=None,
                        help="coordinate visit order within a sweep")
    parser.add_argument("--iters", type=int, default=None, help="number of sweeps")
    parser.add_argument("--lambda", dest="lam", type=float, default=None,
                        help="initial range shrink factor in (0, 1]")
    parser.add_argument("--scale-update", choices=SCALE_UPDATES, default=None,
                        help="scale refit rule between sweeps")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="comq",
        description="Calibration-aware coordinate descent weight quantizer.",
    )
    # metavar hides the oracle subcommand from --help; it stays callable.
    sub = parser.add_subparsers(dest="command", metavar="{quantize,eval,compare-orders}")

    quant = sub.add_parser("quantize", help="quantize every layer in a manifest")
    quant.add_argument("manifest", help="path to a manifest JSON file")
    quant.add_argument("--out", required=True, help="artifact output directory")
    _add_config_flags(quant)
    quant.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: COMQ_THREADS or 1)")
    quant.add_argument("--seed", type=int, default=None,
                       help="recorded in the report; the solver is deterministic")
    quant.set_defaults(func=cmd_quantize)

    ev = sub.add_parser("eval", help="recompute errors from saved artifacts")
    ev.add_argument("manifest", help="path to a manifest JSON file")
    ev.add_argument("artifacts", help="artifact directory written by quantize")
    ev.add_argument("--json", dest="json_path", default=None,
                    help="also dump the report as JSON to this path")
    ev.set_defaults(func=cmd_eval)

    comp = sub.add_parser("compare-orders",
                          help="greedy versus cyclic per-channel visit order")
    comp.add_argument("manifest", help="path to a manifest JSON file")
    _add_config_flags(comp)
    comp.add_argument("--seeds", type=_parse_seeds, default=(),
                      help="comma-separated seeds, recorded in the output")
    comp.add_argument("--json", dest="json_path", default=None,
                      help="also dump the comparison as JSON to this path")
    comp.set_defaults(func=cmd_compare_orders)

    oracle = sub.add_parser("oracle")
    osub = oracle.add_subparsers(dest="oracle_op", metavar="{coordinate,scale,joint}")

    coord = osub.add_parser("coordinate")
    coord.add_argument("--feature", required=True, help="feature column tensor file")
    coord.add_argument("--target", required=True, help="target column tensor file")
    coord.add_argument("--scale", type=float, required=True)
    coord.add_argument("--lo", type=int, required=True)
    coord.add_argument("--hi", type=int, required=True)
    coord.set_defaults(func=cmd_oracle_coordinate)

    scale = osub.add_parser("scale")
    scale.add_argument("--codes", required=True, help="code tensor file")
    scale.add_argument("--calib", required=True, help="calibration tensor file")
    scale.add_argument("--weights", required=True, help="weight tensor file")
    scale.set_defaults(func=cmd_oracle_scale)

    joint = osub.add_parser("joint")
    joint.add_argument("--weights", required=True, help="weight column tensor file")
    joint.add_argument("--calib", required=True, help="calibration tensor file")
    joint.add_argument("--bits", type=int, required=True)
    joint.add_argument("--grid", choices=("symmetric", "affine"), default="symmetric")
    joint.add_argument("--zero-points", type=_parse_seeds, default=(),
                       help="extra zero points to admit for the affine search")
    joint.set_defaults(func=cmd_oracle_joint)

    return parser


def _overrides(args: argparse.Namespace) -> dict:
    return {
        "bits": args.bits,
        "iters": args.iters,
        "lambda": args.lam,
        "granularity": args.granularity,
        "order": args.order,
        "scale_update": args.scale_update,
    }


def _print_table(headers: tuple[str, ...], rows: list[tuple[str, ...]]) -> None:
    widths = [len(h) for h in headers]
    for row in rows:
        widths = [max(w, len(cell)) for w, cell in zip(widths, row)]
    line = "  ".join(h.ljust(w) for h, w in zip(headers, widths))
    print(line)
    print("  ".join("-" * w for w in widths))
    for row in rows:
        print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))


def _print_report(report: JobReport) -> None:
    headers = ("layer", "shape", "before", "after", "relative", "seconds")
    rows = [
        (
            rep.name,
            f"{rep.rows}x{rep.cols}",
            f"{rep.error_before:.6g}",
            f"{rep.error_after:.6g}",
            f"{rep.relative_error:.6g}",
            f"{rep.wall_time_s:.3f}",
        )
        for rep in report.layers
    ]
    _print_table(headers, rows)
    print(f"total error after: {report.total_error_after:.6g} "
          f"({len(report.layers)} layers)")


def cmd_quantize(args: argparse.Namespace) -> int:
    report = run_quantize(args.manifest, args.out, _overrides(args),
                          threads=args.threads, seed=args.seed)
    _print_report(report)
    print(f"report: {Path(args.out) / 'report.json'}")
    if report.degenerate_layers:
        print(f"warning: degenerate layers passed through unquantized: "
              f"{', '.join(report.degenerate_layers)}", file=sys.stderr)
        return 1
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    report = run_eval(args.manifest, args.artifacts)
    _print_report(report)
    if args.json_path:
        with open(args.json_path, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 1 if report.degenerate_layers else 0


def cmd_compare_orders(args: argparse.Namespace) -> int:
    result = run_compare_orders(args.manifest, _overrides(args), seeds=args.seeds)
    headers = ("layer", "greedy", "cyclic", "ratio")
    rows = [
        (
            row["name"],
            f"{row['error_greedy']:.6g}",
            f"{row['error_cyclic']:.6g}",
            f"{row['ratio']:.4f}",
        )
        for row in result["layers"]
    ]
    _print_table(headers, rows)
    if result["median_ratio"] is not None:
        print(f"median greedy/cyclic ratio: {result['median_ratio']:.4f}")
    if args.json_path:
        with open(args.json_path, "w", encoding="utf-8") as fh:
            json.dump(result, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def cmd_oracle_coordinate(args: argparse.Namespace) -> int:
    feature = load_tensor(args.feature)
    target = load_tensor(args.target)
    code = coordinate_argmin(feature, target, args.scale, CodeSet(args.lo, args.hi))
    print(json.dumps({"code": int(code)}))
    return 0


def cmd_oracle_scale(args: argparse.Namespace) -> int:
    codes = load_tensor(args.codes)
    calib = load_tensor(args.calib)
    weights = load_tensor(args.weights)
    print(json.dumps({"scale": scale_argmin_1d(codes, calib, weights)}))
    return 0


def cmd_oracle_joint(args: argparse.Namespace) -> int:
    weights = load_tensor(args.weights)
    calib = load_tensor(args.calib)
    res = brute_force_joint(weights, calib, args.bits, grid=args.grid,
                            extra_zero_points=args.zero_points)
    print(json.dumps({
        "codes": np.asarray(res.codes).tolist(),
        "scale": res.scale,
        "zero_point": res.zero_point,
        "error": res.error,
    }))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    if getattr(args, "func", None) is None:
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except (ManifestError, InvalidConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (QuantError, TensorFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
