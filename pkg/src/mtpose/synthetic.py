"""Procedural single-hand images with exact keypoint annotations.

Used for self-contained runs and tests; nothing here models real hand
appearance beyond a palm disc and five jointed fingers.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from mtpose.dataset import NUM_KEYPOINTS, write_manifest

# finger base angle (degrees from "up") and relative segment lengths, thumb first
_FINGER_LAYOUT = (
    (-62.0, (0.55, 0.45, 0.35, 0.30)),
    (-20.0, (0.95, 0.45, 0.30, 0.25)),
    (-3.0, (0.95, 0.50, 0.33, 0.26)),
    (14.0, (0.90, 0.45, 0.30, 0.24)),
    (31.0, (0.85, 0.36, 0.24, 0.20)),
)


def synthetic_landmarks(rng: np.random.Generator, size: int = 244) -> np.ndarray:
    scale = rng.uniform(0.16, 0.22) * size
    rot = math.radians(rng.uniform(-30.0, 30.0))
    wrist = np.array([size / 2 + rng.uniform(-0.08, 0.08) * size,
                      size * 0.78 + rng.uniform(-0.05, 0.05) * size])
    pts = [wrist]
    for base_angle, segments in _FINGER_LAYOUT:
        a = math.radians(base_angle) + rot + rng.uniform(-0.08, 0.08)
        pos = wrist.copy()
        for seg in segments:
            pos = pos + scale * seg * np.array([math.sin(a), -math.cos(a)])
            pts.append(pos)
            a += rng.uniform(-0.12, 0.12)
    out = np.array(pts)
    assert out.shape == (NUM_KEYPOINTS, 2)
    return np.round(out, 2)


def render_hand(landmarks: np.ndarray, size: int = 244, rng: np.random.Generator | None = None) -> np.ndarray:
    rng = rng or np.random.default_rng(0)
    bg = tuple(int(v) for v in rng.integers(40, 200, size=3))
    skin = (224, 172, 140)
    im = Image.new("RGB", (size, size), bg)
    draw = ImageDraw.Draw(im)
    wrist = landmarks[0]
    bases = landmarks[[1, 5, 9, 13, 17]]
    palm_c = (wrist + bases.mean(axis=0)) / 2
    palm_r = float(np.linalg.norm(bases - palm_c, axis=1).mean())
    draw.ellipse([palm_c[0] - palm_r, palm_c[1] - palm_r, palm_c[0] + palm_r, palm_c[1] + palm_r], fill=skin)
    width = max(2, int(size * 0.03))
    for f in range(5):
        chain = [wrist] + [landmarks[1 + 4 * f + j] for j in range(4)]
        draw.line([tuple(map(float, p)) for p in chain], fill=skin, width=width, joint="curve")
    return np.asarray(im).copy()


def write_synthetic_dataset(out_dir: str | Path, n: int, seed: int = 0, size: int = 244,
                            with_object: int = 0) -> Path:
    """Write ``n`` PNGs plus ``manifest.json``; the last ``with_object`` samples get that tag."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(n):
        kps = synthetic_landmarks(rng, size)
        pixels = render_hand(kps, size, rng)
        name = f"images/hand_{i:05d}.png"
        Image.fromarray(pixels, mode="RGB").save(out_dir / name, format="PNG")
        entries.append({
            "id": f"s{i:05d}",
            "image": name,
            "category": "with_object" if i >= n - with_object else "without_object",
            "keypoints": kps.tolist(),
        })
    path = out_dir / "manifest.json"
    write_manifest(path, entries)
    return path
