"""Command-line entry point for the mono-depth adapter."""

from __future__ import annotations

import argparse
import sys

from .core import (
    DEFAULT_MODEL,
    _configure_logging,
    infer_depth,
    normalize_external,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="monodepth-adapter",
        description="Per-view relative monocular depth maps as normalized "
                    "PFM files.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_inf = sub.add_parser("infer", help="run a monocular depth model")
    p_inf.add_argument("--images", required=True, help="input image directory")
    p_inf.add_argument("--out", required=True, help="output PFM directory")
    p_inf.add_argument("--model", default=DEFAULT_MODEL,
                       help="model identifier (default: %(default)s)")

    p_norm = sub.add_parser("normalize",
                            help="re-normalize existing depth PFMs")
    p_norm.add_argument("--in", dest="in_dir", required=True,
                        help="input PFM directory")
    p_norm.add_argument("--out", required=True, help="output PFM directory")
    return parser


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    if args.command == "infer":
        return infer_depth(args.images, args.out, args.model)
    return normalize_external(args.in_dir, args.out)


if __name__ == "__main__":
    sys.exit(main())
