"""`readout-figures render <kind> --in <dir> --out <file>`"""

from __future__ import annotations

import argparse
import sys

from .io import FigureInputError
from .render import RENDERERS, render


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="readout-figures",
                                 description="Render simulator outputs")
    sub = ap.add_subparsers(dest="command", required=True)
    rp = sub.add_parser("render")
    rp.add_argument("kind", choices=sorted(RENDERERS))
    rp.add_argument("--in", dest="in_dir", required=True,
                    help="simulator output directory (with manifest.json)")
    rp.add_argument("--out", required=True, help="image file to write")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        out = render(args.kind, args.in_dir, args.out)
    except FigureInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
