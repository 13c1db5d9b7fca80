"""Command-line entry point for the figure renderer."""

from __future__ import annotations

import argparse
import sys

from .figures import FigureSpec, KINDS, SchemaError, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spdhg-plots",
        description="Render benchmark CSV output to PNG and SVG figures")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("render", help="render one figure")
    p.add_argument("csvs", nargs="*", help="input CSV files (positional form)")
    p.add_argument("--spec", help="JSON figure spec (overrides positional form)")
    p.add_argument("--kind", choices=KINDS, help="figure kind for positional CSVs")
    p.add_argument("--out", default="figure", help="output path stem (no extension)")
    p.add_argument("--bins", type=int, default=40, help="histogram bin count")
    p.add_argument("--title", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.spec:
            spec = FigureSpec.from_json(args.spec)
        else:
            if not args.kind:
                raise SchemaError("positional CSVs need --kind")
            spec = FigureSpec(kind=args.kind, inputs=list(args.csvs), output=args.out,
                              bins=args.bins, title=args.title)
        for path in render(spec):
            print(path)
        return 0
    except (SchemaError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
