"""Corruptions used to derive follow-up images: occlusion discs, gamma exposure, motion blur."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from mtpose.dataset import NUM_KEYPOINTS, HandLandmarks, ImageBuffer

GAMMA_MAX = 5.5
DIRECTIONS = ("horizontal", "vertical", "diagonal")


@dataclass(frozen=True)
class OcclusionArtifact:
    radius: float = 10.0
    color: int | tuple[int, ...] = 0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"occlusion radius must be positive, got {self.radius}")
        values = self.color if isinstance(self.color, tuple) else (self.color,)
        if not all(0 <= int(v) <= 255 for v in values):
            raise ValueError(f"occlusion color out of 8-bit range: {self.color}")


@dataclass(frozen=True)
class GammaParam:
    gamma: float

    def __post_init__(self):
        if not (0.0 < self.gamma <= GAMMA_MAX):
            raise ValueError(f"gamma must lie in (0, {GAMMA_MAX}], got {self.gamma}")


@dataclass(frozen=True, eq=False)
class MotionKernel:
    size: int
    direction: str
    grid: np.ndarray = field(repr=False)

    @property
    def anchor(self) -> tuple[int, int]:
        return (self.size // 2, self.size // 2)

    @property
    def ones(self) -> int:
        return int(self.grid.sum())


def occlude(image: ImageBuffer, landmarks: HandLandmarks, indices: Iterable[int],
            artifact: OcclusionArtifact = OcclusionArtifact()) -> ImageBuffer:
    """Paint a disc of ``artifact.radius`` over each selected keypoint.

    Pixel (px, py) is covered when its integer centre lies within the radius
    of the keypoint, measured at full sub-pixel precision. Discs are clipped
    at the image border.
    """
    indices = sorted(set(int(i) for i in indices))
    for i in indices:
        if not 0 <= i < NUM_KEYPOINTS:
            raise ValueError(f"landmark index {i} outside 0..{NUM_KEYPOINTS - 1}")
    out = image.pixels.copy()
    if not indices:
        return ImageBuffer(out)

    r = float(artifact.radius)
    r2 = r * r
    color = np.broadcast_to(np.asarray(artifact.color, dtype=np.uint8), (image.channels,))
    for i in indices:
        kx, ky = landmarks.points[i]
        x0 = max(int(math.floor(kx - r)), 0)
        x1 = min(int(math.ceil(kx + r)), image.width - 1)
        y0 = max(int(math.floor(ky - r)), 0)
        y1 = min(int(math.ceil(ky + r)), image.height - 1)
        if x0 > x1 or y0 > y1:
            continue
        px = np.arange(x0, x1 + 1, dtype=np.float64) - kx
        py = np.arange(y0, y1 + 1, dtype=np.float64) - ky
        mask = (py[:, None] ** 2 + px[None, :] ** 2) <= r2
        out[y0:y1 + 1, x0:x1 + 1][mask] = color
    return ImageBuffer(out)


def gamma_lut(gamma: float) -> np.ndarray:
    table = [math.floor(255.0 * math.pow(v / 255.0, gamma) + 0.5) for v in range(256)]
    return np.clip(np.array(table, dtype=np.int64), 0, 255).astype(np.uint8)


def adjust_gamma(image: ImageBuffer, gamma: float | GammaParam) -> ImageBuffer:
    """Map each sample v to round(255 * (v / 255) ** gamma).

    gamma > 1 darkens, gamma < 1 brightens; 0 and 255 are fixed points.
    """
    param = gamma if isinstance(gamma, GammaParam) else GammaParam(float(gamma))
    return ImageBuffer(gamma_lut(param.gamma)[image.pixels])


def build_motion_kernel(size: int, direction: str) -> MotionKernel:
    if size < 1:
        raise ValueError(f"kernel size must be >= 1, got {size}")
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    grid = np.zeros((size, size), dtype=np.uint8)
    a = size // 2
    if direction == "horizontal":
        grid[a, :] = 1
    elif direction == "vertical":
        grid[:, a] = 1
    else:
        np.fill_diagonal(grid, 1)
    grid.setflags(write=False)
    return MotionKernel(size, direction, grid)


def correlate(image: ImageBuffer, kernel: MotionKernel) -> ImageBuffer:
    """Slide the 0/1 kernel over the image and average the samples under its ones.

    Out-of-range samples replicate the nearest edge. The sum over the ones is
    divided by their count and rounded half up, in exact integer arithmetic.
    """
    ar, ac = kernel.anchor
    rows, cols = np.nonzero(kernel.grid)
    count = len(rows)
    if count == 0:
        raise ValueError("kernel has no ones")
    h, w = image.height, image.width
    pad_top, pad_bottom = ar, kernel.size - 1 - ar
    pad_left, pad_right = ac, kernel.size - 1 - ac
    padded = np.pad(image.pixels.astype(np.int64),
                    ((pad_top, pad_bottom), (pad_left, pad_right), (0, 0)), mode="edge")
    total = np.zeros((h, w, image.channels), dtype=np.int64)
    for r, c in zip(rows, cols):
        # kernel cell (r, c) reads input offset (r - ar, c - ac); in padded coords that is (r, c)
        total += padded[r:r + h, c:c + w]
    out = (2 * total + count) // (2 * count)
    return ImageBuffer(out.astype(np.uint8))


def motion_blur(image: ImageBuffer, size: int = 20, direction: str = "horizontal") -> ImageBuffer:
    return correlate(image, build_motion_kernel(size, direction))
