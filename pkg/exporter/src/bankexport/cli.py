"""Command-line front end; flags mirror :class:`ExportConfig`."""

from __future__ import annotations

import argparse
import sys

from .export import BACKBONES, ExportConfig, ExportError, export


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="bankexport",
        description="Export pre-GAP CNN feature maps from an image folder "
        "to a feature bank.",
    )
    p.add_argument("--images", required=True, help="root directory; one subdirectory per class")
    p.add_argument("--out", required=True, help="bank file to write")
    p.add_argument("--labels", default=None, help="JSON file mapping subdirectory to integer label")
    p.add_argument("--backbone", default="resnet50", choices=BACKBONES)
    p.add_argument("--grid", type=int, default=4, help="target grid side (default 4)")
    p.add_argument("--dim", type=int, default=128, help="embedding dim per cell (default 128)")
    p.add_argument("--weights", default=None, help="state-dict file for the backbone")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0, help="seed for the fallback random projection")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = ExportConfig(
            image_root=args.images,
            out=args.out,
            label_map=args.labels,
            backbone=args.backbone,
            grid=args.grid,
            dim=args.dim,
            weights=args.weights,
            batch_size=args.batch_size,
            seed=args.seed,
        )
    except ValueError as exc:
        print(f"bankexport: {exc}", file=sys.stderr)
        return 2
    try:
        export(config)
    except (ExportError, OSError, ValueError) as exc:
        print(f"bankexport: {exc}", file=sys.stderr)
        return 1
    return 0


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
