#!/usr/bin/env python3
"""Export an image-level descriptor file (GDSC, 2048-D, L2-normalized)."""

from __future__ import annotations

import argparse
import sys

from .backends import DESCRIPTOR_BACKENDS
from .formats import image_files, load_image, write_descriptor_file
from .manifest import AdapterManifest


def export_descriptors(images_dir, output_path, model="pooled-gradient"):
    backend = DESCRIPTOR_BACKENDS[model]()
    records = []
    failures = []
    for path in image_files(images_dir):
        try:
            records.append((path.stem, backend(load_image(path))))
        except Exception as exc:  # per-file failure, keep exporting
            failures.append((path.name, str(exc)))
            print(f"warning: {path.name}: {exc}", file=sys.stderr)
    write_descriptor_file(records, output_path)
    AdapterManifest.now(backend.name, backend.version, images_dir,
                        output_path).write_sidecar()
    return len(records), failures


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--images", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--model", default="pooled-gradient",
                        choices=sorted(DESCRIPTOR_BACKENDS))
    parser.add_argument("--device", default="cpu",
                        help="forwarded to neural backends; classical ones ignore it")
    parser.add_argument("--batch-size", type=int, default=8)
    args = parser.parse_args(argv)
    count, failures = export_descriptors(args.images, args.out, args.model)
    print(f"exported {count} descriptors -> {args.out}")
    return 0 if not failures else 1


if __name__ == "__main__":
    sys.exit(main())
