import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from obloc.obfuscate import (
    DimensionMismatch,
    InvalidFactor,
    InvalidKernel,
    MissingPaletteEntry,
    canny,
    clahe,
    clipped_histogram,
    gaussian_blur,
    gaussian_kernel,
    infill_diffusion,
    label_color,
    mask_fill,
    pixelate,
    render_borders,
    render_random_colors,
    render_semantic_colors,
    sobel_gradients,
    to_grayscale,
)


def random_image(rng, h=64, w=64, channels=1):
    shape = (h, w) if channels == 1 else (h, w, channels)
    return rng.integers(0, 256, size=shape, dtype=np.uint8)


# ---------------------------------------------------------------------------
# gaussian_blur
# ---------------------------------------------------------------------------

def test_blur_constant_image(rng):
    img = np.full((40, 50), 137, dtype=np.uint8)
    assert np.array_equal(gaussian_blur(img, 41, 6.5), img)


def test_blur_rejects_even_kernel(rng):
    img = random_image(rng)
    with pytest.raises(InvalidKernel):
        gaussian_blur(img, 40, 6.5)
    with pytest.raises(InvalidKernel):
        gaussian_blur(img, 0, 6.5)


def test_blur_impulse_matches_sampled_gaussian():
    # single white pixel: response equals the normalized 2-D kernel
    img = np.zeros((101, 101), dtype=np.uint8)
    img[50, 50] = 255
    for size, sigma in ((41, 6.5), (81, 12.5)):
        out = gaussian_blur(img, size, sigma).astype(np.float64)
        k = gaussian_kernel(size, sigma)
        expected = 255.0 * np.outer(k, k)
        half = size // 2
        y0, y1 = 50 - half, 50 + half + 1
        region = out[max(y0, 0):y1, max(y0, 0):y1]
        exp_crop = expected[max(0, -y0):, max(0, -y0):][:region.shape[0],
                                                        :region.shape[1]]
        assert np.abs(region - exp_crop).max() <= 1.0


def test_blur_preserves_mean(rng):
    img = random_image(rng, 80, 80)
    out = gaussian_blur(img, 41, 6.5)
    assert abs(float(out.mean()) - float(img.mean())) <= 1.0


def test_blur_preserves_shape_rgb(rng):
    img = random_image(rng, 30, 40, 3)
    assert gaussian_blur(img, 5, 1.0).shape == img.shape


# ---------------------------------------------------------------------------
# pixelate
# ---------------------------------------------------------------------------

def test_pixelate_idempotent_on_block_constant(rng):
    small = rng.integers(0, 256, size=(4, 5), dtype=np.uint8)
    img = np.repeat(np.repeat(small, 10, axis=0), 10, axis=1)
    assert np.array_equal(pixelate(img, 10), img)


def test_pixelate_block_mean_property(rng):
    for factor in (10, 20):
        img = random_image(rng, 97, 123)  # non-divisible on purpose
        out = pixelate(img, factor)
        for by in range(0, 97, factor):
            for bx in range(0, 123, factor):
                block = img[by:by + factor, bx:bx + factor]
                got = out[by:by + factor, bx:bx + factor]
                assert np.all(got == got[0, 0])
                assert abs(float(got[0, 0]) - block.mean()) <= 1.0


def test_pixelate_invalid_factor(rng):
    img = random_image(rng, 20, 20)
    with pytest.raises(InvalidFactor):
        pixelate(img, 1)
    with pytest.raises(InvalidFactor):
        pixelate(img, 21)


def test_pixelate_preserves_mean(rng):
    img = random_image(rng, 100, 100)
    out = pixelate(img, 10)
    assert abs(float(out.mean()) - float(img.mean())) <= 1.0


# ---------------------------------------------------------------------------
# clahe
# ---------------------------------------------------------------------------

def test_clahe_constant_image():
    img = np.full((64, 64), 90, dtype=np.uint8)
    out = clahe(img)
    assert (out == out[0, 0]).all()


def test_clahe_two_level_image(rng):
    img = np.where(rng.random((128, 128)) < 0.5, 0, 255).astype(np.uint8)
    out = clahe(img)
    assert set(np.unique(out)) <= {0, 255}
    assert np.array_equal(out == 255, img == 255)


def test_clahe_clip_property(rng):
    # no clipped bin exceeds the integer clip ceiling before redistribution
    clip = 2.0
    for _ in range(10):
        tile = rng.integers(0, 256, size=(32, 32), dtype=np.uint8)
        clipped, redistributed = clipped_histogram(tile, clip)
        limit = max(int(clip * tile.size / 256.0), 1)
        assert clipped.max() <= limit
        assert redistributed.sum() == tile.size


def test_clahe_output_range(rng):
    img = random_image(rng, 90, 70)
    out = clahe(img)
    assert out.dtype == np.uint8
    assert out.shape == img.shape


# ---------------------------------------------------------------------------
# canny
# ---------------------------------------------------------------------------

def test_canny_constant_empty():
    img = np.full((50, 50), 77, dtype=np.uint8)
    assert not canny(img, 50, 150).any()


def test_canny_vertical_step_edge():
    img = np.zeros((40, 60), dtype=np.uint8)
    img[:, 30:] = 255
    edges = canny(img, 50, 150)
    cols = np.nonzero(edges.any(axis=0))[0]
    assert len(cols) == 1                  # single-pixel-wide line
    assert 28 <= cols[0] <= 31
    assert edges[:, cols[0]].all()          # every row marked


def test_canny_threshold_order():
    img = np.zeros((10, 10), dtype=np.uint8)
    with pytest.raises(ValueError):
        canny(img, 100, 50)


def test_canny_hysteresis_property(rng):
    # edges lie where the L1 gradient >= low, and every connected component
    # contains a pixel >= high
    img = ndimage.gaussian_filter(
        rng.integers(0, 256, size=(80, 80)).astype(np.float64), 3.0)
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    low, high = 5.0, 20.0
    edges = canny(img, low, high)
    if not edges.any():
        pytest.skip("degenerate random field")
    k3 = np.array([1.0, 2.0, 1.0]) / 4.0
    smooth = ndimage.correlate1d(img.astype(np.float64), k3, axis=0,
                                 mode="nearest")
    smooth = ndimage.correlate1d(smooth, k3, axis=1, mode="nearest")
    gx, gy = sobel_gradients(smooth)
    mag = np.abs(gx) + np.abs(gy)
    assert (mag[edges] >= low).all()
    labels, n = ndimage.label(edges, structure=np.ones((3, 3), dtype=int))
    for lab in range(1, n + 1):
        assert mag[labels == lab].max() >= high


# ---------------------------------------------------------------------------
# mask_fill / infill_diffusion
# ---------------------------------------------------------------------------

def test_mask_fill_empty_mask_identity(rng):
    img = random_image(rng, 30, 30, 3)
    mask = np.zeros((30, 30), dtype=bool)
    assert np.array_equal(mask_fill(img, mask), img)


def test_mask_fill_full_black(rng):
    img = random_image(rng, 30, 30, 3)
    mask = np.ones((30, 30), dtype=bool)
    assert not mask_fill(img, mask).any()


def test_mask_fill_idempotent(rng):
    img = random_image(rng, 30, 30, 3)
    mask = rng.random((30, 30)) < 0.3
    once = mask_fill(img, mask, (10, 20, 30))
    twice = mask_fill(once, mask, (10, 20, 30))
    assert np.array_equal(once, twice)


def test_mask_fill_dimension_mismatch(rng):
    with pytest.raises(DimensionMismatch):
        mask_fill(random_image(rng, 30, 30), np.zeros((10, 10), dtype=bool))


def test_infill_empty_mask_identity(rng):
    img = random_image(rng, 20, 20, 3)
    mask = np.zeros((20, 20), dtype=bool)
    assert np.array_equal(infill_diffusion(img, mask, 10), img)


def test_infill_constant_fixed_point(rng):
    img = np.full((30, 30), 200, dtype=np.uint8)
    mask = rng.random((30, 30)) < 0.4
    assert np.array_equal(infill_diffusion(img, mask, 50), img)


def test_infill_reconstructs_linear_gradient():
    # a harmonic (linear) image is the diffusion fixed point, so a masked
    # strip is recovered from its boundary values
    w = 40
    img = np.rint(np.linspace(40, 215, w))[None, :].repeat(32, axis=0)
    img = img.astype(np.uint8)
    mask = np.zeros((32, w), dtype=bool)
    mask[:, 18:26] = True
    out = infill_diffusion(img, mask, 500)
    assert np.abs(out.astype(int) - img.astype(int)).max() <= 2


def test_infill_leaves_unmasked_pixels(rng):
    img = random_image(rng, 25, 25)
    mask = rng.random((25, 25)) < 0.3
    out = infill_diffusion(img, mask, 20)
    assert np.array_equal(out[~mask], img[~mask])


# ---------------------------------------------------------------------------
# label-map renderings
# ---------------------------------------------------------------------------

def test_borders_uniform_black():
    assert not render_borders(np.full((20, 20), 5, dtype=np.int32)).any()


def test_borders_half_plane_two_pixels():
    labels = np.zeros((10, 20), dtype=np.int32)
    c = 8
    labels[:, c:] = 1
    out = render_borders(labels)
    cols = np.nonzero(out.any(axis=0))[0]
    assert cols.tolist() == [c - 1, c]
    assert (out[:, [c - 1, c]] == 255).all()


def brute_force_border_count(labels):
    h, w = labels.shape
    count = 0
    for y in range(h):
        for x in range(w):
            for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and labels[ny, nx] != labels[y, x]:
                    count += 1
                    break
    return count


def test_borders_match_brute_force(rng):
    for _ in range(100):
        labels = rng.integers(0, 6, size=(24, 24)).astype(np.int32)
        got = int((render_borders(labels) > 0).sum())
        assert got == brute_force_border_count(labels)


def test_borders_relabeling_invariance(rng):
    labels = rng.integers(0, 8, size=(32, 32)).astype(np.int32)
    perm = rng.permutation(8) + 10
    relabeled = perm[labels]
    assert np.array_equal(render_borders(labels), render_borders(relabeled))


def test_random_colors_uniform_map(rng):
    labels = np.full((16, 16), 3, dtype=np.int32)
    out = render_random_colors(labels, seed=4)
    assert (out.reshape(-1, 3) == out[0, 0]).all()


def test_random_colors_deterministic(rng):
    labels = rng.integers(0, 50, size=(40, 40)).astype(np.int32)
    a = render_random_colors(labels, seed=9)
    b = render_random_colors(labels, seed=9)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, render_random_colors(labels, seed=10))


def test_random_colors_zero_is_black():
    labels = np.zeros((4, 4), dtype=np.int32)
    assert not render_random_colors(labels, seed=1).any()


def test_random_colors_collision_rate():
    labels = np.arange(1, 1201, dtype=np.int64)
    colliding = 0
    for seed in range(10):
        colors = label_color(labels, seed)
        packed = (colors[:, 0].astype(np.int64) << 16 \
                  | colors[:, 1].astype(np.int64) << 8 | colors[:, 2])
        _, counts = np.unique(packed, return_counts=True)
        colliding += int(counts[counts > 1].sum())
    assert colliding / (10 * len(labels)) < 0.01


def test_semantic_colors_lookup():
    labels = np.full((8, 8), 1, dtype=np.int32)
    out = render_semantic_colors(labels, {1: (10, 20, 30)})
    assert (out.reshape(-1, 3) == [10, 20, 30]).all()


def test_semantic_colors_missing_label():
    labels = np.full((8, 8), 2, dtype=np.int32)
    with pytest.raises(MissingPaletteEntry):
        render_semantic_colors(labels, {1: (0, 0, 0)})


def test_semantic_colors_roundtrip(rng):
    labels = rng.integers(0, 12, size=(30, 30)).astype(np.int32)
    palette = {i: ((i * 37) % 256, (i * 91) % 256, (i * 7 + 3) % 256)
               for i in range(12)}
    out = render_semantic_colors(labels, palette)
    inverse = {v: k for k, v in palette.items()}
    recovered = np.array([[inverse[tuple(px)] for px in row] for row in out])
    assert np.array_equal(recovered, labels)


def test_grayscale_conversion(rng):
    img = random_image(rng, 10, 10, 3)
    gray = to_grayscale(img)
    assert gray.shape == (10, 10)
    luma = 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]
    assert np.abs(gray.astype(float) - luma).max() <= 1.0
