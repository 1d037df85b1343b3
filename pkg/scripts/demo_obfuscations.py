#!/usr/bin/env python3
"""Render every obfuscation method for a procedurally generated test image.

Usage: python scripts/demo_obfuscations.py --out demo_out/
"""

import argparse
from pathlib import Path

import numpy as np

from obloc import obfuscate as obf
from obloc.dataio import write_labelmap, write_raster


def checkerboard_scene(rng, h=240, w=320):
    """Test raster plus a label map segmenting its structures."""
    img = np.zeros((h, w, 3), dtype=np.uint8)
    labels = np.zeros((h, w), dtype=np.int32)
    img[:] = (60, 90, 140)
    labels[:] = 1
    ys, xs = np.mgrid[0:h, 0:w]
    tile = ((ys // 24 + xs // 24) % 2).astype(bool)
    img[tile] = (200, 180, 40)
    labels[tile] = 2
    for i in range(6):
        cy, cx = rng.integers(40, h - 40), rng.integers(40, w - 40)
        r = int(rng.integers(12, 30))
        disk = (ys - cy) ** 2 + (xs - cx) ** 2 < r * r
        img[disk] = rng.integers(0, 256, size=3)
        labels[disk] = 3 + i
    noise = rng.normal(scale=6.0, size=img.shape)
    img = np.clip(img.astype(float) + noise, 0, 255).astype(np.uint8)
    mask = (ys - h // 2) ** 2 + (xs - w // 3) ** 2 < (h // 5) ** 2
    return img, labels, mask


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="demo_out")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(args.seed)
    img, labels, mask = checkerboard_scene(rng)
    gray = obf.to_grayscale(img)

    write_raster(img, out / "original.png")
    write_labelmap(labels, out / "labels.png")
    write_raster(np.where(mask, 255, 0).astype(np.uint8), out / "mask.png")

    renders = {
        "blur41": obf.gaussian_blur(img, *obf.BLUR_LIGHT),
        "blur81": obf.gaussian_blur(img, *obf.BLUR_HEAVY),
        "pixelate10": obf.pixelate(img, obf.PIXELATE_LIGHT),
        "pixelate20": obf.pixelate(img, obf.PIXELATE_HEAVY),
        "clahe": obf.clahe(gray),
        "canny": np.where(obf.canny(obf.clahe(gray)), 255, 0).astype(np.uint8),
        "mask_fill": obf.mask_fill(img, mask),
        "infill": obf.infill_diffusion(img, mask, iterations=300),
        "borders": obf.render_borders(labels),
        "random_colors": obf.render_random_colors(labels, seed=args.seed),
        "semantic_colors": obf.render_semantic_colors(
            labels, {lab: ((lab * 53) % 256, (lab * 101) % 256,
                           (lab * 31) % 256)
                     for lab in np.unique(labels)}),
    }
    for name, raster in renders.items():
        write_raster(raster, out / f"{name}.png")
    print(f"wrote {len(renders) + 3} images -> {out}")


if __name__ == "__main__":
    main()
