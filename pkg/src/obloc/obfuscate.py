"""Deterministic image obfuscation operators.

Images are numpy uint8 arrays, (h, w) grayscale or (h, w, 3) RGB; label maps
are integer arrays with 0 meaning unlabeled; masks are boolean arrays. Every
operator is a pure function of its inputs and declared parameters.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

BLUR_LIGHT = (41, 6.5)    # kernel px, sigma
BLUR_HEAVY = (81, 12.5)
PIXELATE_LIGHT = 10
PIXELATE_HEAVY = 20
CANNY_DEFAULT_LOW = 50.0
CANNY_DEFAULT_HIGH = 150.0
CLAHE_DEFAULT_CLIP = 2.0
CLAHE_DEFAULT_TILES = (8, 8)


class InvalidKernel(Exception):
    pass


class InvalidFactor(Exception):
    pass


class DimensionMismatch(Exception):
    pass


class MissingPaletteEntry(Exception):
    pass


def _as_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim not in (2, 3):
        raise ValueError("expected uint8 image of shape (h, w) or (h, w, c)")
    return img


def _check_mask(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != img.shape[:2]:
        raise DimensionMismatch(
            f"mask {mask.shape} does not match image {img.shape[:2]}")
    return mask


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian sampled at integer offsets."""
    half = size // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img: np.ndarray, kernel_px: int, sigma: float) -> np.ndarray:
    """Separable Gaussian convolution with edge-replicate padding."""
    img = _as_image(img)
    if kernel_px < 3 or kernel_px % 2 == 0:
        raise InvalidKernel(f"kernel size must be odd and >= 3, got {kernel_px}")
    k = gaussian_kernel(kernel_px, sigma)
    out = img.astype(np.float64)
    out = ndimage.correlate1d(out, k, axis=0, mode="nearest")
    out = ndimage.correlate1d(out, k, axis=1, mode="nearest")
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def pixelate(img: np.ndarray, factor: int) -> np.ndarray:
    """Box-filter downsample by factor, then nearest-neighbor upsample.

    Output is constant on each factor x factor block; edge blocks of
    non-divisible sizes average over the available pixels.
    """
    img = _as_image(img)
    h, w = img.shape[:2]
    if factor < 2 or factor > min(h, w):
        raise InvalidFactor(f"factor must be in [2, {min(h, w)}], got {factor}")
    edges_y = np.arange(0, h, factor)
    edges_x = np.arange(0, w, factor)
    counts_y = np.minimum(edges_y + factor, h) - edges_y
    counts_x = np.minimum(edges_x + factor, w) - edges_x
    acc = np.add.reduceat(img.astype(np.float64), edges_y, axis=0)
    acc = np.add.reduceat(acc, edges_x, axis=1)
    denom = counts_y[:, None] * counts_x[None, :]
    if img.ndim == 3:
        denom = denom[:, :, None]
    small = acc / denom
    up = np.repeat(np.repeat(small, factor, axis=0), factor, axis=1)
    up = up[:h, :w]
    return np.clip(np.rint(up), 0, 255).astype(np.uint8)


def clipped_histogram(values: np.ndarray, clip_limit: float):
    """256-bin histogram clipped at clip_limit x uniform height, plus the
    excess mass redistributed uniformly (remainder to the lowest bins)."""
    hist = np.bincount(values.reshape(-1), minlength=256).astype(np.int64)
    n = values.size
    limit = max(int(clip_limit * n / 256.0), 1)
    clipped = np.minimum(hist, limit)
    excess = int(hist.sum() - clipped.sum())
    redistributed = clipped + excess // 256
    for i in range(excess % 256):
        redistributed[i] += 1
    return clipped, redistributed


def _tile_mapping(values: np.ndarray, clip_limit: float) -> np.ndarray:
    _, hist = clipped_histogram(values, clip_limit)
    cdf = np.cumsum(hist)
    nonzero = np.nonzero(hist)[0]
    cdf_min = cdf[nonzero[0]] if len(nonzero) else 0
    total = cdf[-1]
    if total == cdf_min:
        return np.arange(256, dtype=np.float64)
    return 255.0 * np.clip(cdf - cdf_min, 0, None) / (total - cdf_min)


def clahe(img: np.ndarray, clip_limit: float = CLAHE_DEFAULT_CLIP,
          tiles: tuple[int, int] = CLAHE_DEFAULT_TILES) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization, grayscale only.

    Per-tile clipped-histogram equalization with bilinear interpolation
    between the mappings of the four nearest tile centers.
    """
    img = _as_image(img)
    if img.ndim != 2:
        raise ValueError("clahe expects a single-channel image")
    h, w = img.shape
    ty, tx = tiles
    ty, tx = min(ty, h), min(tx, w)
    bounds_y = np.linspace(0, h, ty + 1).astype(int)
    bounds_x = np.linspace(0, w, tx + 1).astype(int)
    maps = np.empty((ty, tx, 256))
    centers_y = (bounds_y[:-1] + bounds_y[1:]) / 2.0 - 0.5
    centers_x = (bounds_x[:-1] + bounds_x[1:]) / 2.0 - 0.5
    for i in range(ty):
        for j in range(tx):
            tile = img[bounds_y[i]:bounds_y[i + 1], bounds_x[j]:bounds_x[j + 1]]
            maps[i, j] = _tile_mapping(tile, clip_limit)

    yy = np.arange(h, dtype=np.float64)
    xx = np.arange(w, dtype=np.float64)
    fy = np.interp(yy, centers_y, np.arange(ty, dtype=np.float64))
    fx = np.interp(xx, centers_x, np.arange(tx, dtype=np.float64))
    i0 = np.clip(np.floor(fy).astype(int), 0, ty - 1)
    j0 = np.clip(np.floor(fx).astype(int), 0, tx - 1)
    i1 = np.minimum(i0 + 1, ty - 1)
    j1 = np.minimum(j0 + 1, tx - 1)
    wy = (fy - i0)[:, None]
    wx = (fx - j0)[None, :]

    v = img
    m00 = maps[i0[:, None], j0[None, :], v]
    m01 = maps[i0[:, None], j1[None, :], v]
    m10 = maps[i1[:, None], j0[None, :], v]
    m11 = maps[i1[:, None], j1[None, :], v]
    out = ((1 - wy) * (1 - wx) * m00 + (1 - wy) * wx * m01
           + wy * (1 - wx) * m10 + wy * wx * m11)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def sobel_gradients(img_f: np.ndarray):
    """Sobel-3 gradients with replicate borders."""
    kx = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
    gx = ndimage.correlate(img_f, kx, mode="nearest")
    gy = ndimage.correlate(img_f, kx.T, mode="nearest")
    return gx, gy


def canny(img: np.ndarray, low: float = CANNY_DEFAULT_LOW,
          high: float = CANNY_DEFAULT_HIGH) -> np.ndarray:
    """Edge mask: 3x3 Gaussian smoothing, Sobel-3 gradients with L1
    magnitude, four-direction non-maximum suppression, and double-threshold
    hysteresis with 8-connectivity."""
    img = _as_image(img)
    if img.ndim != 2:
        raise ValueError("canny expects a single-channel image")
    if not (0.0 <= low <= high):
        raise ValueError("thresholds must satisfy 0 <= low <= high")
    smooth = img.astype(np.float64)
    k3 = np.array([1.0, 2.0, 1.0]) / 4.0
    smooth = ndimage.correlate1d(smooth, k3, axis=0, mode="nearest")
    smooth = ndimage.correlate1d(smooth, k3, axis=1, mode="nearest")
    gx, gy = sobel_gradients(smooth)
    mag = np.abs(gx) + np.abs(gy)

    angle = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    direction = np.zeros(angle.shape, dtype=np.int8)       # 0: E-W
    direction[(angle >= 22.5) & (angle < 67.5)] = 1        # NE-SW
    direction[(angle >= 67.5) & (angle < 112.5)] = 2       # N-S
    direction[(angle >= 112.5) & (angle < 157.5)] = 3      # NW-SE

    padded = np.pad(mag, 1, mode="constant")
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    h, w = mag.shape
    keep = np.zeros((h, w), dtype=bool)
    for d, (dy, dx) in offsets.items():
        sel = direction == d
        nxt = padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        prv = padded[1 - dy:1 - dy + h, 1 - dx:1 - dx + w]
        keep |= sel & (mag > prv) & (mag >= nxt)

    strong = keep & (mag >= high)
    weak = keep & (mag >= low)
    labels, _ = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    edge_labels = np.unique(labels[strong])
    edge_labels = edge_labels[edge_labels != 0]
    return np.isin(labels, edge_labels)


def mask_fill(img: np.ndarray, mask: np.ndarray, color=(0, 0, 0)) -> np.ndarray:
    """Masked pixels set to a constant color; all others bit-identical."""
    img = _as_image(img)
    mask = _check_mask(img, mask)
    out = img.copy()
    if img.ndim == 2:
        out[mask] = int(np.atleast_1d(color)[0])
    else:
        out[mask] = np.asarray(color, dtype=np.uint8)
    return out


def infill_diffusion(img: np.ndarray, mask: np.ndarray,
                     iterations: int = 500) -> np.ndarray:
    """Fill masked pixels by neighbor diffusion.

    Masked pixels are first initialized layer by layer with the mean of their
    already-filled 8-neighbors, then smoothed with Jacobi averaging passes
    over the masked region only; unmasked pixels are untouched. A mask
    covering the whole image is returned unchanged (no boundary data).
    """
    img = _as_image(img)
    mask = _check_mask(img, mask)
    if not mask.any():
        return img.copy()
    if mask.all():
        return img.copy()
    work = img.astype(np.float64)
    if work.ndim == 2:
        work = work[:, :, None]
    filled = ~mask
    kernel = np.ones((3, 3))
    remaining = mask.copy()
    while remaining.any():
        counts = ndimage.correlate(filled.astype(np.float64), kernel,
                                   mode="constant")
        frontier = remaining & (counts > 0)
        if not frontier.any():
            break  # unreachable region, keep original values
        for c in range(work.shape[2]):
            sums = ndimage.correlate(np.where(filled, work[:, :, c], 0.0),
                                     kernel, mode="constant")
            work[frontier, c] = sums[frontier] / counts[frontier]
        filled |= frontier
        remaining &= ~frontier

    neighbor = np.ones((3, 3))
    neighbor[1, 1] = 0.0
    ncount = ndimage.correlate(np.ones(mask.shape), neighbor, mode="constant")
    for _ in range(iterations):
        for c in range(work.shape[2]):
            sums = ndimage.correlate(work[:, :, c], neighbor, mode="constant")
            work[mask, c] = sums[mask] / ncount[mask]
    out = np.clip(np.rint(work), 0, 255).astype(np.uint8)
    if img.ndim == 2:
        out = out[:, :, 0]
    out[~mask] = img[~mask]
    return out


def render_borders(labels: np.ndarray) -> np.ndarray:
    """White-on-black border image: a pixel is border iff any in-bounds
    4-neighbor carries a different label."""
    labels = np.asarray(labels)
    border = np.zeros(labels.shape, dtype=bool)
    border[:-1, :] |= labels[:-1, :] != labels[1:, :]
    border[1:, :] |= labels[1:, :] != labels[:-1, :]
    border[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    border[:, 1:] |= labels[:, 1:] != labels[:, :-1]
    return np.where(border, 255, 0).astype(np.uint8)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    # uint64 wraparound is the point of the mixer
    with np.errstate(over="ignore"):
        x = x + np.uint64(0x9E3779B97F4A7C15)
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def label_color(label, seed: int):
    """Deterministic RGB triple for a (label, seed) pair; label 0 is black."""
    label = np.asarray(label, dtype=np.uint64)
    h = _splitmix64(label ^ _splitmix64(np.asarray(seed, dtype=np.uint64)))
    rgb = np.stack([(h >> np.uint64(16)) & np.uint64(255),
                    (h >> np.uint64(8)) & np.uint64(255),
                    h & np.uint64(255)], axis=-1).astype(np.uint8)
    return np.where(np.asarray(label)[..., None] == 0, 0, rgb).astype(np.uint8)


def render_random_colors(labels: np.ndarray, seed: int) -> np.ndarray:
    """Each segment filled with a hash-derived color, stable per (label, seed)."""
    labels = np.asarray(labels)
    present, inverse = np.unique(labels, return_inverse=True)
    palette = label_color(present, seed)
    return palette[inverse].reshape(labels.shape + (3,))


def render_semantic_colors(labels: np.ndarray, palette: dict) -> np.ndarray:
    """Per-pixel palette lookup; every present label must have an entry."""
    labels = np.asarray(labels)
    present = np.unique(labels)
    missing = [int(p) for p in present if int(p) not in palette]
    if missing:
        raise MissingPaletteEntry(f"no palette entry for labels {missing}")
    lut = np.zeros((int(present.max()) + 1, 3), dtype=np.uint8)
    for lab in present:
        lut[int(lab)] = palette[int(lab)]
    return lut[labels]


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Integer-rounded luma conversion (Rec. 601 weights)."""
    img = _as_image(img)
    if img.ndim == 2:
        return img.copy()
    f = img.astype(np.float64)
    return np.clip(np.rint(0.299 * f[:, :, 0] + 0.587 * f[:, :, 1]
                           + 0.114 * f[:, :, 2]), 0, 255).astype(np.uint8)
