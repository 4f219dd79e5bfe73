"""promi-export: dataset images -> feature files + benchmark manifest."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .encoder import ENCODERS
from .export import export_features
from .spec import ExportSpec


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promi-export",
        description="Encode dataset images into patch feature maps (NPY) "
                    "with masks, boxes, and a benchmark manifest.")
    parser.add_argument("--dataset", required=True,
                        help="dataset root: one directory per class with "
                             "<stem>.jpg/.png images and <stem>.mask.png masks")
    parser.add_argument("--classes", required=True,
                        help="comma-separated class directory names "
                             "(acts as the fold filter)")
    parser.add_argument("--resolution", type=int, default=672,
                        help="square resize fed to the encoder (default 672)")
    parser.add_argument("--encoder", default="dinov2-vitb14",
                        choices=list(ENCODERS))
    parser.add_argument("--weights", default=None,
                        help="local directory with encoder weights "
                             "(otherwise downloaded)")
    parser.add_argument("--connectivity", type=int, default=4,
                        choices=[4, 8])
    parser.add_argument("--min-component-px", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0,
                        help="weight seed for *-untrained encoders")
    parser.add_argument("--out", required=True, help="output directory")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("PROMI_LOG", "INFO").upper(),
        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    spec = ExportSpec(
        dataset_root=Path(args.dataset),
        classes=tuple(c for c in args.classes.split(",") if c),
        out_dir=Path(args.out),
        resolution=args.resolution,
        encoder=args.encoder,
        weights_path=Path(args.weights) if args.weights else None,
        connectivity=args.connectivity,
        min_component_px=args.min_component_px,
        seed=args.seed,
    )
    try:
        manifest_path = export_features(spec)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {manifest_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
