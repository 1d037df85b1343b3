#!/usr/bin/env python3
"""Export 2D-2D matches for listed image pairs (MATCHES v1, best 1024 per
pair by confidence)."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .backends import MATCHER_BACKENDS
from .formats import load_image, write_matches_file
from .manifest import AdapterManifest

TOP_MATCHES = 1024


def read_pairs(path) -> list[tuple[str, str]]:
    pairs = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"pairs file line must be 'query reference': {line!r}")
        pairs.append((parts[0], parts[1]))
    return pairs


def export_matches(query_dir, reference_dir, pairs, output_path,
                   model="zncc-pyramid", top=TOP_MATCHES):
    backend = MATCHER_BACKENDS[model]()
    blocks = []
    failures = []
    cache = {}

    def load(directory, name):
        key = (str(directory), name)
        if key not in cache:
            matches = [p for p in Path(directory).iterdir()
                       if p.stem == name and p.suffix.lower() in
                       (".png", ".jpg", ".jpeg")]
            if not matches:
                raise FileNotFoundError(f"no image {name!r} in {directory}")
            cache[key] = load_image(matches[0])
        return cache[key]

    for qid, rid in pairs:
        try:
            rows = backend(load(query_dir, qid), load(reference_dir, rid))
        except Exception as exc:
            failures.append(((qid, rid), str(exc)))
            print(f"warning: pair {qid}-{rid}: {exc}", file=sys.stderr)
            continue
        blocks.append((qid, rid, rows[:top]))
    write_matches_file(blocks, output_path)
    AdapterManifest.now(backend.name, backend.version,
                        f"{query_dir} x {reference_dir}",
                        output_path).write_sidecar()
    return len(blocks), failures


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--queries", required=True)
    parser.add_argument("--references", required=True)
    parser.add_argument("--pairs", required=True,
                        help="text file of 'query_id reference_id' lines")
    parser.add_argument("--out", required=True)
    parser.add_argument("--model", default="zncc-pyramid",
                        choices=sorted(MATCHER_BACKENDS))
    parser.add_argument("--top", type=int, default=TOP_MATCHES)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--batch-size", type=int, default=1)
    args = parser.parse_args(argv)
    pairs = read_pairs(args.pairs)
    done, failures = export_matches(args.queries, args.references, pairs,
                                    args.out, args.model, args.top)
    print(f"exported {done}/{len(pairs)} pairs -> {args.out}")
    if pairs and not done:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
