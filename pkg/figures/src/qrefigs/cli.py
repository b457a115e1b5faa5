"""Standalone figure renderer over qrelab CSV exports.

Example:
    qrelab-figures --kind surface --input surface.csv --output fig1.png
    qrelab-figures --kind path-overlay --input surface.csv \
        --input anarchy.csv --input socialism.csv --input market.csv \
        --output fig3.png
"""
from __future__ import annotations

import argparse
import json
import sys

from .render import KINDS, FigureError, render

__all__ = ["main"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qrelab-figures", description=__doc__)
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument(
        "--input",
        action="append",
        required=True,
        help="input CSV (repeat for figures that take several)",
    )
    parser.add_argument("--output", required=True, help="image file to write")
    parser.add_argument("--z", default=None, help="z-axis column for 3D kinds")
    parser.add_argument("--x", default=None, help="x-axis column for the cross-section")
    parser.add_argument("--y", default=None, help="y-axis column for the cross-section")
    parser.add_argument("--fold-threshold", type=float, default=0.05)
    parser.add_argument("--title", default="")
    return parser


def main(argv: list[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    kwargs: dict = {"title": ns.title}
    if ns.kind == "surface":
        kwargs["fold_threshold"] = ns.fold_threshold
        if ns.z:
            kwargs["z_column"] = ns.z
    elif ns.kind == "path-overlay":
        if ns.z:
            kwargs["z_column"] = ns.z
    elif ns.kind == "path-cross-section":
        if ns.x:
            kwargs["x_column"] = ns.x
        if ns.y:
            kwargs["y_column"] = ns.y
    try:
        render(ns.kind, ns.input, ns.output, **kwargs)
    except FigureError as exc:
        sys.stderr.write(json.dumps({"error": "figure", "message": str(exc)}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
