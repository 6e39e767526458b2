"""Command line entry point: ``meta-oed-figures {atlas,curves} --in ... --out ...``.

Exit codes: 0 on success, 2 on bad arguments or input files that do not match
the documented schemas (including empty files).
"""

from __future__ import annotations

import argparse
import sys

from meta_oed_figures.artifacts import SchemaError
from meta_oed_figures.render import render_atlas, render_curves

EXIT_OK = 0
EXIT_INPUT = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meta-oed-figures",
        description="Render experiment CSV artifacts as static images.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    atlas = sub.add_parser("atlas", help="three-panel threat atlas from a diagnose atlas.csv")
    atlas.add_argument("--in", dest="inputs", required=True, help="atlas.csv path")
    atlas.add_argument("--out", required=True, help="output image path")

    curves = sub.add_parser("curves", help="mean/IQR learning curves from run curves.csv files")
    curves.add_argument(
        "--in",
        dest="inputs",
        action="append",
        required=True,
        help="curves.csv path (give twice to overlay two policies)",
    )
    curves.add_argument("--out", required=True, help="output image path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "atlas":
            render_atlas(args.inputs, args.out)
        else:
            if len(args.inputs) > 2:
                raise SchemaError("curves accepts at most two --in files")
            render_curves(args.inputs, args.out)
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
