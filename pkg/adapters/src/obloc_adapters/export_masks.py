#!/usr/bin/env python3
"""Export binary masks of privacy-sensitive classes as bilevel PNGs.

Several --config files may be given; the exported mask is the union of the
masks each configured model produces.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .backends import MASK_CLASSES, ColorRangeMasker
from .formats import image_files, load_image, write_mask_png
from .manifest import AdapterManifest


def export_masks(images_dir, output_dir, configs, classes=None):
    classes = list(classes) if classes is not None else list(MASK_CLASSES)
    backends = [ColorRangeMasker.from_json(c) for c in configs]
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    done = 0
    failures = []
    for path in image_files(images_dir):
        try:
            img = load_image(path)
            mask = np.zeros(img.shape[:2], dtype=bool)
            for backend in backends:
                mask |= backend(img, classes)
            write_mask_png(mask, out / f"{path.stem}.png")
            done += 1
        except Exception as exc:
            failures.append((path.name, str(exc)))
            print(f"warning: {path.name}: {exc}", file=sys.stderr)
    AdapterManifest.now(ColorRangeMasker.name,
                        f"{ColorRangeMasker.version} union-of-{len(backends)}",
                        images_dir, output_dir).write_sidecar()
    return done, failures


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--images", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--config", action="append", required=True,
                        help="JSON of class -> [[r,g,b] lo, [r,g,b] hi]; "
                             "repeat for union-of-models behavior")
    parser.add_argument("--classes", nargs="*", default=None,
                        help=f"default: the {len(MASK_CLASSES)}-class list")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--batch-size", type=int, default=1)
    args = parser.parse_args(argv)
    done, failures = export_masks(args.images, args.out, args.config,
                                  args.classes)
    print(f"exported {done} masks -> {args.out}")
    return 0 if not failures else 1


if __name__ == "__main__":
    sys.exit(main())
