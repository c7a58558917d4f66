"""Command line wrapper around export_model.

Exit codes: 0 on success (including an empty export under a warning),
1 when the export itself fails, 2 for bad arguments.
"""

from __future__ import annotations

import argparse
import sys

from comq_exporter.capture import DEFAULT_ROW_CAP, TOY_MODELS, ExportError, \
    ExportSpec, export_model


def _parse_shape(text: str) -> tuple[int, ...]:
    try:
        shape = tuple(int(part) for part in text.split(",") if part.strip())
        if not shape or any(dim <= 0 for dim in shape):
            raise ValueError
        return shape
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad input shape {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="comq-export",
        description="Export layer weights and captured calibration inputs "
                    "from a PyTorch model into a quantizer manifest.",
    )
    parser.add_argument("model",
                        help=f"checkpoint path or one of: {', '.join(TOY_MODELS)}")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--include", action="append", default=None,
                        metavar="PATTERN",
                        help="fnmatch filter on layer names; repeatable "
                             "(default: every supported layer)")
    parser.add_argument("--batches", type=int, default=4)
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--input-shape", type=_parse_shape, default=None,
                        metavar="D0,D1,...",
                        help="per-example input shape; required for checkpoints")
    parser.add_argument("--row-cap", type=int, default=DEFAULT_ROW_CAP,
                        help="max calibration rows kept per layer")
    parser.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    if args.batches < 1 or args.batch_size < 1 or args.row_cap < 1:
        print("error: batches, batch size, and row cap must be positive",
              file=sys.stderr)
        return 2
    spec = ExportSpec(
        model=args.model,
        out_dir=args.out,
        patterns=tuple(args.include) if args.include else ("*",),
        batches=args.batches,
        batch_size=args.batch_size,
        input_shape=args.input_shape,
        row_cap=args.row_cap,
        seed=args.seed,
    )
    try:
        result = export_model(spec)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"exported {len(result.layer_names)} layers to {result.manifest_path}")
    for skip in result.skipped:
        print(f"skipped {skip.name} ({skip.kind}): {skip.reason}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
