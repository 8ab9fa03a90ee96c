import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtpose.dataset import HandLandmarks, ImageBuffer
from mtpose.transforms import (
    OcclusionArtifact,
    GammaParam,
    adjust_gamma,
    build_motion_kernel,
    correlate,
    occlude,
)


def scan_disc_mask(width, height, centres, radius):
    """Per-pixel distance scan."""
    mask = np.zeros((height, width), dtype=bool)
    for y in range(height):
        for x in range(width):
            for cx, cy in centres:
                if (x - cx) ** 2 + (y - cy) ** 2 <= radius * radius:
                    mask[y, x] = True
                    break
    return mask


def nested_loop_correlate(src, grid):
    h, w, c = src.shape
    m = len(grid)
    a = m // 2
    ones = [(r, q) for r in range(m) for q in range(m) if grid[r][q]]
    out = np.zeros_like(src)
    for y in range(h):
        for x in range(w):
            for ch in range(c):
                s = 0
                for r, q in ones:
                    yy = min(max(y + r - a, 0), h - 1)
                    xx = min(max(x + q - a, 0), w - 1)
                    s += int(src[yy, xx, ch])
                out[y, x, ch] = math.floor(s / len(ones) + 0.5)
    return out


def landmarks_at(points):
    pts = np.zeros((21, 2))
    pts[:len(points)] = points
    return HandLandmarks(pts)


class TestOcclude:
    def test_empty_index_set(self, rng):
        img = ImageBuffer(rng.integers(0, 256, (30, 30, 3), dtype=np.uint8))
        assert occlude(img, HandLandmarks(rng.uniform(0, 30, (21, 2))), set()) == img

    def test_single_disc_pixel_count(self):
        img = ImageBuffer.blank(244, 244, 3, 255)
        out = occlude(img, landmarks_at([(122, 122)]), {0}, OcclusionArtifact(10))
        changed = np.any(out.pixels != img.pixels, axis=2)
        assert changed.sum() == scan_disc_mask(244, 244, [(122, 122)], 10).sum() == 317

    def test_all_keypoints_union(self, rng):
        pts = rng.uniform(-5, 65, (21, 2))
        img = ImageBuffer.blank(60, 60, 3, 200)
        out = occlude(img, HandLandmarks(pts), range(21))
        changed = np.any(out.pixels != img.pixels, axis=2)
        assert np.array_equal(changed, scan_disc_mask(60, 60, pts.tolist(), 10))

    def test_default_artifact_is_black_radius_ten(self):
        art = OcclusionArtifact()
        assert art.radius == 10 and art.color == 0
        out = occlude(ImageBuffer.blank(40, 40, 3, 255), landmarks_at([(20, 20)]), {0})
        assert out.pixels[20, 20].tolist() == [0, 0, 0]
        assert out.pixels[20, 30].tolist() == [0, 0, 0]
        assert out.pixels[20, 31].tolist() == [255, 255, 255]

    def test_disc_clipped_at_border(self):
        out = occlude(ImageBuffer.blank(20, 20, 1, 255), landmarks_at([(0, 0)]), {0})
        assert np.array_equal(out.pixels[:, :, 0] == 0, scan_disc_mask(20, 20, [(0, 0)], 10))

    def test_bad_index(self):
        with pytest.raises(ValueError):
            occlude(ImageBuffer.blank(5, 5), landmarks_at([]), {21})

    def test_radius_must_be_positive(self):
        with pytest.raises(ValueError):
            OcclusionArtifact(0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sets(st.integers(0, 20)))
    def test_idempotent_and_order_free(self, seed, idx):
        r = np.random.default_rng(seed)
        img = ImageBuffer(r.integers(0, 256, (40, 40, 3), dtype=np.uint8))
        lm = HandLandmarks(r.uniform(0, 40, (21, 2)))
        once = occlude(img, lm, idx)
        assert occlude(once, lm, idx) == once
        assert occlude(img, lm, sorted(idx, reverse=True)) == once
        assert img == ImageBuffer(img.pixels.copy())  # input untouched


class TestGamma:
    def test_identity(self, rng):
        img = ImageBuffer(rng.integers(0, 256, (16, 16, 3), dtype=np.uint8))
        assert adjust_gamma(img, 1.0) == img

    @pytest.mark.parametrize("gamma, expected", [(2, 64), (0.5, 181)])
    def test_scalar_values(self, gamma, expected):
        out = adjust_gamma(ImageBuffer(np.full((1, 1), 128, dtype=np.uint8)), gamma)
        assert out.pixels[0, 0, 0] == expected

    @pytest.mark.parametrize("gamma", [5, 2, 0.5, 0.2])
    def test_canonical_gammas_valid(self, gamma):
        assert GammaParam(gamma).gamma == gamma

    @pytest.mark.parametrize("gamma", [0, -1, 5.6])
    def test_out_of_range(self, gamma):
        with pytest.raises(ValueError):
            GammaParam(gamma)

    def test_channels_independent(self):
        px = np.array([[[0, 128, 255]]], dtype=np.uint8)
        assert adjust_gamma(ImageBuffer(px), 2).pixels.tolist() == [[[0, 64, 255]]]

    @given(st.floats(0.01, 5.5), st.floats(0.01, 5.5))
    def test_monotone_in_gamma_and_value(self, g1, g2):
        lo, hi = sorted((g1, g2))
        ramp = ImageBuffer(np.arange(256, dtype=np.uint8).reshape(16, 16))
        a = adjust_gamma(ramp, lo).pixels.ravel().astype(int)
        b = adjust_gamma(ramp, hi).pixels.ravel().astype(int)
        assert np.all(b <= a)
        assert np.all(np.diff(a) >= 0) and np.all(np.diff(b) >= 0)
        assert a[0] == 0 and a[255] == 255 and b[0] == 0 and b[255] == 255


class TestKernel:
    def test_horizontal_three(self):
        k = build_motion_kernel(3, "horizontal")
        assert k.grid.tolist() == [[0, 0, 0], [1, 1, 1], [0, 0, 0]]
        assert k.anchor == (1, 1)

    def test_diagonal_three(self):
        assert build_motion_kernel(3, "diagonal").grid.tolist() == [[1, 0, 0], [0, 1, 0], [0, 0, 1]]

    def test_vertical_even(self):
        k = build_motion_kernel(4, "vertical")
        assert k.anchor == (2, 2)
        assert k.grid[:, 2].tolist() == [1, 1, 1, 1] and k.ones == 4

    @pytest.mark.parametrize("direction", ["horizontal", "vertical", "diagonal"])
    def test_twenty_has_twenty_ones(self, direction):
        k = build_motion_kernel(20, direction)
        assert k.grid.shape == (20, 20) and k.ones == 20
        assert set(np.unique(k.grid)) <= {0, 1}
        assert k.anchor == (10, 10)

    def test_bad_params(self):
        with pytest.raises(ValueError):
            build_motion_kernel(0, "horizontal")
        with pytest.raises(ValueError):
            build_motion_kernel(3, "radial")


class TestCorrelate:
    def test_identity_kernel(self, rng):
        img = ImageBuffer(rng.integers(0, 256, (9, 11, 3), dtype=np.uint8))
        assert correlate(img, build_motion_kernel(1, "diagonal")).data == img.data

    @pytest.mark.parametrize("direction", ["horizontal", "vertical", "diagonal"])
    def test_constant_preserved(self, direction):
        img = ImageBuffer.blank(30, 25, 3, 200)
        assert correlate(img, build_motion_kernel(20, direction)) == img

    def test_single_white_pixel(self):
        src = np.zeros((5, 5, 1), dtype=np.uint8)
        src[2, 2] = 255
        out = correlate(ImageBuffer(src), build_motion_kernel(3, "horizontal"))
        expected = np.zeros((5, 5), dtype=np.uint8)
        expected[2, 1:4] = 85  # 255 / 3
        assert np.array_equal(out.pixels[:, :, 0], expected)
        assert np.array_equal(out.pixels, nested_loop_correlate(src, [[0, 0, 0], [1, 1, 1], [0, 0, 0]]))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 8),
           st.sampled_from(["horizontal", "vertical", "diagonal"]))
    def test_matches_nested_loop_and_stays_in_range(self, seed, size, direction):
        src = np.random.default_rng(seed).integers(0, 256, (7, 9, 3), dtype=np.uint8)
        k = build_motion_kernel(size, direction)
        out = correlate(ImageBuffer(src), k)
        assert np.array_equal(out.pixels, nested_loop_correlate(src, k.grid.tolist()))
        assert out.pixels.min() >= src.min() and out.pixels.max() <= src.max()
        assert out.pixels.shape == src.shape
