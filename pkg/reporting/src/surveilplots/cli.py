"""Command line: render --kind K --in DIR --out FILE."""

from __future__ import annotations

import argparse
import sys

from .render import FigureSpec, SchemaError, render


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="surveilplots")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("render", help="render one figure from exported CSVs")
    p.add_argument("--kind", required=True,
                   choices=("trajectory", "finals", "design_freq"))
    p.add_argument("--in", dest="in_dir", required=True,
                   help="run directory or sweep directory")
    p.add_argument("--out", required=True, help="output image path")
    p.add_argument("--facet", default="k", choices=("k", "risk_scale"))
    p.add_argument("--strategies", default="",
                   help="comma-separated subset of strategies/selectors")
    p.add_argument("--format", dest="image_format", default="png")

    args = parser.parse_args(argv)
    subset = tuple(s.strip() for s in args.strategies.split(",") if s.strip())
    spec = FigureSpec(in_dir=args.in_dir, kind=args.kind, out_path=args.out,
                      facet=args.facet, strategies=subset,
                      image_format=args.image_format)
    try:
        out = render(spec)
    except SchemaError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
