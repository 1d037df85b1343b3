"""Model backends behind the export scripts.

The bundled backends are classical and fully deterministic, so exports are
reproducible without weights or a GPU:

* ``pooled-gradient`` — image-level descriptor: grid-pooled gradient
  orientation histograms and color statistics expanded to 2048 dimensions by
  a fixed random projection.
* ``zncc-pyramid`` — dense-ish matcher: grid keypoints tracked coarse-to-fine
  with normalized cross-correlation; confidence is the rescaled correlation.
* ``slic`` — class-free segmentation via SLIC superpixels; coarse/fine map to
  roughly 16x16 / 32x32 seed grids.
* ``color-range`` — mask backend selecting configured per-class color ranges
  (a stand-in for a semantic segmenter; real deployments register a neural
  backend under the same interface).

A neural backend only needs to provide the same callable surface and register
itself in the relevant registry.
"""

from __future__ import annotations

import json

import numpy as np
from skimage.feature import match_template
from skimage.segmentation import slic
from skimage.transform import resize

DESCRIPTOR_DIM = 2048
_PROJECTION_KEY = 0x0B10C  # fixed: projections must agree across runs/machines

MASK_CLASSES = [
    "Animal", "Person", "Car", "Boat", "Bus", "Truck", "Plane", "Van",
    "Ship", "Motorbike", "Bicycle", "Painting", "Mirror", "Sign", "Book",
    "Computer", "TV", "Poster", "Screen", "CRT Screen", "Monitor",
    "Bulletin board", "Clock", "Flag",
]


def to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]


# ---------------------------------------------------------------------------
# descriptors
# ---------------------------------------------------------------------------

class PooledGradientDescriptor:
    """2048-D image descriptor from pooled gradients and color moments."""

    name = "pooled-gradient"
    version = "grid8x8-ori8-proj2048"

    def __init__(self):
        self._projection = None

    def _projection_for(self, raw_dim: int) -> np.ndarray:
        if self._projection is None or self._projection.shape[1] != raw_dim:
            rng = np.random.Generator(np.random.Philox(key=_PROJECTION_KEY))
            self._projection = rng.normal(
                size=(DESCRIPTOR_DIM, raw_dim)) / np.sqrt(raw_dim)
        return self._projection

    def __call__(self, img: np.ndarray) -> np.ndarray:
        work = resize(np.asarray(img, dtype=np.float64) / 255.0, (128, 128),
                      anti_aliasing=True, mode="reflect")
        if work.ndim == 2:
            work = np.stack([work] * 3, axis=-1)
        gray = to_gray(work * 255.0)
        gy, gx = np.gradient(gray)
        mag = np.hypot(gx, gy)
        ori = np.mod(np.arctan2(gy, gx), np.pi)
        bins = np.minimum((ori / np.pi * 8).astype(int), 7)

        cells = []
        step = 16  # 8x8 grid over 128x128
        for cy in range(0, 128, step):
            for cx in range(0, 128, step):
                m = mag[cy:cy + step, cx:cx + step].ravel()
                b = bins[cy:cy + step, cx:cx + step].ravel()
                hist = np.bincount(b, weights=m, minlength=8)
                total = hist.sum()
                cells.append(hist / total if total > 0 else hist)
        grad_feat = np.concatenate(cells)  # 512

        color_feat = resize(work, (8, 8), anti_aliasing=True,
                            mode="reflect").ravel()  # 192
        luma_hist = np.histogram(gray, bins=32, range=(0, 255))[0]
        luma_feat = luma_hist / max(luma_hist.sum(), 1)  # 32

        raw = np.concatenate([grad_feat, color_feat, luma_feat])
        vec = self._projection_for(len(raw)) @ raw
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            vec = np.zeros(DESCRIPTOR_DIM)
            vec[0] = 1.0
            return vec
        return vec / norm


# ---------------------------------------------------------------------------
# matching
# ---------------------------------------------------------------------------

class ZnccPyramidMatcher:
    """Coarse-to-fine template matching on a grid of textured keypoints."""

    name = "zncc-pyramid"
    version = "grid8-patch9-levels3"

    def __init__(self, grid_step: int = 8, patch_radius: int = 4,
                 levels: int = 3, refine_radius: int = 3):
        self.grid_step = grid_step
        self.patch_radius = patch_radius
        self.levels = levels
        self.refine_radius = refine_radius

    def _pyramid(self, gray: np.ndarray) -> list[np.ndarray]:
        levels = [gray]
        for _ in range(self.levels - 1):
            h, w = levels[-1].shape
            if min(h, w) < 4 * self.patch_radius + 2:
                break
            levels.append(resize(levels[-1], (h // 2, w // 2),
                                 anti_aliasing=True, mode="reflect"))
        return levels

    def _keypoints(self, gray: np.ndarray) -> np.ndarray:
        gy, gx = np.gradient(gray)
        response = np.hypot(gx, gy)
        margin = self.patch_radius + 1
        ys = np.arange(margin, gray.shape[0] - margin, self.grid_step)
        xs = np.arange(margin, gray.shape[1] - margin, self.grid_step)
        pts = [(x, y) for y in ys for x in xs if response[y, x] > 1e-3]
        return np.array(pts, dtype=np.float64).reshape(-1, 2)

    def _search(self, ga, gb, x, y, px, py, radius):
        """Best-correlation position of a's patch near b's prediction."""
        r = self.patch_radius
        hb, wb = gb.shape
        x0, x1 = int(px - radius - r), int(px + radius + r + 1)
        y0, y1 = int(py - radius - r), int(py + radius + r + 1)
        if x0 < 0 or y0 < 0 or x1 > wb or y1 > hb:
            return None
        template = ga[int(y - r):int(y + r + 1), int(x - r):int(x + r + 1)]
        if template.std() < 1e-9:
            return None
        region = gb[y0:y1, x0:x1]
        scores = match_template(region, template)
        iy, ix = np.unravel_index(np.argmax(scores), scores.shape)
        return x0 + ix + r, y0 + iy + r, float(scores[iy, ix])

    def __call__(self, img_a: np.ndarray, img_b: np.ndarray,
                 max_matches: int = 4096) -> np.ndarray:
        """Rows (x_a, y_a, x_b, y_b, confidence), best first."""
        ga, gb = to_gray(img_a), to_gray(img_b)
        pyr_a, pyr_b = self._pyramid(ga), self._pyramid(gb)
        depth = min(len(pyr_a), len(pyr_b))
        keypoints = self._keypoints(ga)
        rows = []
        coarse_scale = 2 ** (depth - 1)
        for x, y in keypoints:
            # coarse level: wide search around the same normalized position
            cx, cy = x / coarse_scale, y / coarse_scale
            level_a, level_b = pyr_a[depth - 1], pyr_b[depth - 1]
            radius = max(level_b.shape) // 4
            r = self.patch_radius
            if not (r < cx < level_a.shape[1] - r - 1
                    and r < cy < level_a.shape[0] - r - 1):
                continue
            hit = self._search(level_a, level_b, round(cx), round(cy),
                               cx, cy, radius)
            if hit is None:
                continue
            bx, by, score = hit
            for lvl in range(depth - 2, -1, -1):
                scale = 2 ** lvl
                ax, ay = x / scale, y / scale
                bx, by = bx * 2, by * 2
                la, lb = pyr_a[lvl], pyr_b[lvl]
                if not (r < ax < la.shape[1] - r - 1
                        and r < ay < la.shape[0] - r - 1):
                    hit = None
                    break
                hit = self._search(la, lb, round(ax), round(ay), bx, by,
                                   self.refine_radius)
                if hit is None:
                    break
                bx, by, score = hit
            if hit is None:
                continue
            rows.append((x, y, float(bx), float(by),
                         min(max((score + 1.0) / 2.0, 0.0), 1.0)))
        if not rows:
            return np.empty((0, 5))
        rows = np.array(rows)
        order = np.argsort(-rows[:, 4], kind="stable")[:max_matches]
        return rows[order]


# ---------------------------------------------------------------------------
# segmentation
# ---------------------------------------------------------------------------

class SlicSegmenter:
    """Class-free superpixel label maps; 0 stays reserved for unlabeled."""

    name = "slic"
    version = "skimage-slic-compactness10"

    GRID = {"coarse": 16, "fine": 32}

    def __call__(self, img: np.ndarray, granularity: str) -> np.ndarray:
        if granularity not in self.GRID:
            raise ValueError(f"granularity must be coarse or fine, "
                             f"got {granularity!r}")
        n = self.GRID[granularity] ** 2
        work = np.asarray(img)
        if work.ndim == 2:
            work = np.stack([work] * 3, axis=-1)
        labels = slic(work, n_segments=n, compactness=10.0, start_label=1,
                      channel_axis=-1)
        # densify: consecutive ids from 1, order of first appearance by id
        present = np.unique(labels)
        remap = np.zeros(int(present.max()) + 1, dtype=np.int32)
        remap[present] = np.arange(1, len(present) + 1)
        return remap[labels]


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------

class ColorRangeMasker:
    """Binary masks from per-class inclusive RGB ranges.

    Config maps class name -> [[r0, g0, b0], [r1, g1, b1]]; classes missing
    from the config never match, so an image with none of the listed classes
    yields an empty mask.
    """

    name = "color-range"
    version = "rgb-band-v1"

    def __init__(self, config: dict):
        self.config = {k: (np.asarray(lo, dtype=np.int64),
                           np.asarray(hi, dtype=np.int64))
                       for k, (lo, hi) in config.items()}

    @staticmethod
    def from_json(path) -> "ColorRangeMasker":
        with open(path) as fh:
            return ColorRangeMasker(json.load(fh))

    def __call__(self, img: np.ndarray, classes: list[str]) -> np.ndarray:
        img = np.asarray(img)
        if img.ndim == 2:
            img = np.stack([img] * 3, axis=-1)
        mask = np.zeros(img.shape[:2], dtype=bool)
        for cls in classes:
            if cls not in self.config:
                continue
            lo, hi = self.config[cls]
            mask |= ((img >= lo) & (img <= hi)).all(axis=-1)
        return mask


DESCRIPTOR_BACKENDS = {"pooled-gradient": PooledGradientDescriptor}
MATCHER_BACKENDS = {"zncc-pyramid": ZnccPyramidMatcher}
SEGMENTER_BACKENDS = {"slic": SlicSegmenter}
