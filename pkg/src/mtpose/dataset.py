"""Hand samples: landmarks, raster buffers, manifest loading and patch preprocessing."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

NUM_KEYPOINTS = 21
CATEGORIES = ("with_object", "without_object")

# Wrist first, then four joints per finger from the palm outwards.
WRIST = 0
FINGERS = {
    "thumb": (1, 2, 3, 4),
    "index": (5, 6, 7, 8),
    "middle": (9, 10, 11, 12),
    "ring": (13, 14, 15, 16),
    "pinky": (17, 18, 19, 20),
}


class ManifestError(ValueError):
    """Base class for manifest problems."""


class ManifestParseError(ManifestError):
    pass


class ManifestValidationError(ManifestError):
    pass


class DegenerateGeometryError(ValueError):
    pass


def round_half_away(values):
    """Round to nearest integer, ties away from zero (numpy rounds ties to even)."""
    values = np.asarray(values, dtype=np.float64)
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


@dataclass(frozen=True, eq=False)
class HandLandmarks:
    """21 ordered (x, y) keypoints in pixel coordinates."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.shape != (NUM_KEYPOINTS, 2):
            raise ValueError(f"expected {NUM_KEYPOINTS} (x, y) points, got array of shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("landmark coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_list(cls, points: Sequence[Sequence[float]]) -> HandLandmarks:
        return cls(np.asarray(points, dtype=np.float64))

    def to_list(self) -> list[list[float]]:
        return [[float(x), float(y)] for x, y in self.points]

    @property
    def xs(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def ys(self) -> np.ndarray:
        return self.points[:, 1]

    def __eq__(self, other):
        if not isinstance(other, HandLandmarks):
            return NotImplemented
        return bool(np.array_equal(self.points, other.points))

    def __repr__(self):
        return f"HandLandmarks({self.to_list()!r})"


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """8-bit raster stored as a (height, width, channels) array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"expected (height, width, 1|3) raster, got shape {px.shape}")
        if px.dtype != np.uint8:
            raise TypeError(f"expected uint8 samples, got {px.dtype}")
        px = np.ascontiguousarray(px)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def data(self) -> bytes:
        """Row-major sample bytes."""
        return self.pixels.tobytes()

    def copy(self) -> ImageBuffer:
        return ImageBuffer(self.pixels.copy())

    @classmethod
    def blank(cls, width: int, height: int, channels: int = 3, value: int = 0) -> ImageBuffer:
        return cls(np.full((height, width, channels), value, dtype=np.uint8))

    @classmethod
    def from_png(cls, path: str | Path) -> ImageBuffer:
        with Image.open(path) as im:
            if im.mode in ("L", "1"):
                arr = np.asarray(im.convert("L"))
            else:
                arr = np.asarray(im.convert("RGB"))
        return cls(arr.copy())

    def to_png(self, path: str | Path) -> None:
        arr = self.pixels[:, :, 0] if self.channels == 1 else self.pixels
        Image.fromarray(arr, mode="L" if self.channels == 1 else "RGB").save(path, format="PNG")

    def __eq__(self, other):
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))

    def __repr__(self):
        return f"ImageBuffer(width={self.width}, height={self.height}, channels={self.channels})"


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"inverted box {self.as_list()}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def as_list(self) -> list[float]:
        return [float(self.x_min), float(self.y_min), float(self.x_max), float(self.y_max)]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> BoundingBox:
        if len(values) != 4:
            raise ValueError(f"bbox needs 4 values, got {len(values)}")
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    image_path: Path
    category: str
    landmarks: HandLandmarks

    def load_image(self) -> ImageBuffer:
        return ImageBuffer.from_png(self.image_path)


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    root: Path | None = None

    def __len__(self):
        return len(self.entries)

    def __iter__(self) -> Iterator[ManifestEntry]:
        return iter(self.entries)

    def __getitem__(self, idx):
        return self.entries[idx]


def _parse_entry(raw, position: int, root: Path) -> ManifestEntry:
    label = f"entry #{position}"
    if not isinstance(raw, dict):
        raise ManifestParseError(f"{label}: expected an object, got {type(raw).__name__}")
    sample_id = raw.get("id")
    if not isinstance(sample_id, str) or not sample_id:
        raise ManifestParseError(f"{label}: missing or non-string 'id'")
    label = f"entry #{position} (id={sample_id!r})"
    image = raw.get("image")
    if not isinstance(image, str) or not image:
        raise ManifestParseError(f"{label}: missing or non-string 'image'")
    category = raw.get("category")
    if category not in CATEGORIES:
        raise ManifestParseError(f"{label}: category must be one of {CATEGORIES}, got {category!r}")
    kps = raw.get("keypoints")
    if not isinstance(kps, list):
        raise ManifestParseError(f"{label}: 'keypoints' must be an array")
    for p in kps:
        if (not isinstance(p, list) or len(p) != 2
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in p)):
            raise ManifestParseError(f"{label}: every keypoint must be an [x, y] number pair")
    if len(kps) != NUM_KEYPOINTS:
        raise ManifestValidationError(
            f"sample {sample_id!r}: expected {NUM_KEYPOINTS} keypoints, got {len(kps)}")
    try:
        landmarks = HandLandmarks.from_list(kps)
    except ValueError as exc:
        raise ManifestValidationError(f"sample {sample_id!r}: {exc}") from None

    path = (root / image).resolve()
    if not path.is_file():
        raise FileNotFoundError(f"sample {sample_id!r}: image file not found: {path}")
    try:
        with Image.open(path) as im:
            im.verify()
    except Exception as exc:
        raise ManifestValidationError(f"sample {sample_id!r}: {path} does not decode as an image ({exc})") from None
    return ManifestEntry(sample_id, path, category, landmarks)


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load and fully validate a JSON manifest.

    Image paths are resolved relative to the manifest's directory. Entry order
    is preserved.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestParseError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(raw, list):
        raise ManifestParseError(f"{path}: top level must be an array of entries")
    root = path.resolve().parent
    entries = []
    seen = set()
    for i, item in enumerate(raw):
        entry = _parse_entry(item, i, root)
        if entry.sample_id in seen:
            raise ManifestValidationError(f"duplicate sample id {entry.sample_id!r}")
        seen.add(entry.sample_id)
        entries.append(entry)
    return DatasetManifest(tuple(entries), root)


def write_manifest(path: str | Path, entries: Sequence[dict]) -> None:
    Path(path).write_text(json.dumps(list(entries), indent=2) + "\n", encoding="utf-8")


def tight_bbox(landmarks: HandLandmarks) -> BoundingBox:
    xs, ys = landmarks.xs, landmarks.ys
    return BoundingBox(float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max()))


def crop_square_patch(image: ImageBuffer, landmarks: HandLandmarks,
                      scale: float = 2.2) -> tuple[ImageBuffer, HandLandmarks]:
    """Cut a square patch of side ``scale * max(bbox w, bbox h)`` around the hand.

    The patch is centred on the tight keypoint box. Its pixel side is the
    requested side rounded to the nearest integer and its origin is snapped to
    the pixel grid, so the copy involves no resampling. Source regions outside
    the image are filled with zeros.
    """
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    box = tight_bbox(landmarks)
    extent = max(box.width, box.height)
    if extent <= 0:
        raise DegenerateGeometryError("all landmarks coincide; the hand box has no extent")
    side = int(round_half_away(scale * extent))
    if side < 1:
        raise DegenerateGeometryError(f"patch side {scale * extent} rounds to zero pixels")
    cx, cy = box.center
    ox = int(round_half_away(cx - side / 2.0))
    oy = int(round_half_away(cy - side / 2.0))

    out = np.zeros((side, side, image.channels), dtype=np.uint8)
    sx0, sy0 = max(ox, 0), max(oy, 0)
    sx1, sy1 = min(ox + side, image.width), min(oy + side, image.height)
    if sx0 < sx1 and sy0 < sy1:
        out[sy0 - oy:sy1 - oy, sx0 - ox:sx1 - ox] = image.pixels[sy0:sy1, sx0:sx1]
    moved = landmarks.points - np.array([ox, oy], dtype=np.float64)
    return ImageBuffer(out), HandLandmarks(moved)


def _bilinear_axis(src_len: int, dst_len: int):
    # half-pixel centre alignment, source coordinate clamped to the valid range
    coord = (np.arange(dst_len, dtype=np.float64) + 0.5) * (src_len / dst_len) - 0.5
    coord = np.clip(coord, 0.0, src_len - 1)
    lo = np.floor(coord).astype(np.intp)
    hi = np.minimum(lo + 1, src_len - 1)
    frac = coord - lo
    return lo, hi, frac


def resize(image: ImageBuffer, landmarks: HandLandmarks,
           side: int = 244) -> tuple[ImageBuffer, HandLandmarks]:
    """Bilinear resize to ``side x side``; landmarks scale with each axis."""
    if side < 1:
        raise ValueError(f"side must be >= 1, got {side}")
    if image.width < 1 or image.height < 1:
        raise ValueError("cannot resize an empty image")
    sx = side / image.width
    sy = side / image.height
    pts = landmarks.points * np.array([sx, sy])
    if image.width == side and image.height == side:
        return image.copy(), HandLandmarks(pts)

    src = image.pixels.astype(np.float64)
    x0, x1, fx = _bilinear_axis(image.width, side)
    y0, y1, fy = _bilinear_axis(image.height, side)
    fx = fx[None, :, None]
    fy = fy[:, None, None]
    top = src[y0][:, x0] * (1.0 - fx) + src[y0][:, x1] * fx
    bottom = src[y1][:, x0] * (1.0 - fx) + src[y1][:, x1] * fx
    out = top * (1.0 - fy) + bottom * fy
    out = np.clip(round_half_away(out), 0, 255).astype(np.uint8)
    return ImageBuffer(out), HandLandmarks(pts)
