#!/usr/bin/env python3
"""Export class-free segmentation label maps as 16-bit PNGs (0 = unlabeled)."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .backends import SEGMENTER_BACKENDS
from .formats import image_files, load_image, write_labelmap_png
from .manifest import AdapterManifest


def export_labelmaps(images_dir, output_dir, granularity="fine",
                     model="slic"):
    backend = SEGMENTER_BACKENDS[model]()
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    done = 0
    failures = []
    for path in image_files(images_dir):
        try:
            labels = backend(load_image(path), granularity)
            write_labelmap_png(labels, out / f"{path.stem}.png")
            done += 1
        except Exception as exc:
            failures.append((path.name, str(exc)))
            print(f"warning: {path.name}: {exc}", file=sys.stderr)
    AdapterManifest.now(backend.name,
                        f"{backend.version} granularity={granularity}",
                        images_dir, output_dir).write_sidecar()
    return done, failures


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--images", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--granularity", default="fine",
                        choices=["coarse", "fine"])
    parser.add_argument("--model", default="slic",
                        choices=sorted(SEGMENTER_BACKENDS))
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--batch-size", type=int, default=1)
    args = parser.parse_args(argv)
    done, failures = export_labelmaps(args.images, args.out, args.granularity,
                                      args.model)
    print(f"exported {done} label maps -> {args.out}")
    return 0 if not failures else 1


if __name__ == "__main__":
    sys.exit(main())
