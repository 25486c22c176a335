"""Synthetic shape-detection dataset.

Each sample is a single-channel image of low-amplitude noise with 1 to 4
bright, non-overlapping shapes drawn on it. The three classes are
rectangle (0), ellipse (1), and triangle (2). Annotations are the analytic
tight boxes of the shapes in pixel coordinates (pixel (row i, col j) covers
[j, j+1) x [i, i+1), so a mask-derived tight box agrees within one pixel).

Generation is fully deterministic for a given seed.
"""

from __future__ import annotations

import numpy as np

from .losses import BBox
from .tensor import ConfigError, Tensor

CLASS_NAMES = ("rectangle", "ellipse", "triangle")

_NOISE_LOW, _NOISE_HIGH = 0.05, 0.40
_SHAPE_LOW, _SHAPE_HIGH = 0.70, 0.95


def _rasterize(kind: int, cx: float, cy: float, half_w: float, half_h: float,
               size: int) -> np.ndarray:
    """Boolean mask of pixels whose centers fall inside the shape."""
    ys, xs = np.mgrid[0:size, 0:size]
    px = xs + 0.5
    py = ys + 0.5
    if kind == 0:  # rectangle
        return (np.abs(px - cx) <= half_w) & (np.abs(py - cy) <= half_h)
    if kind == 1:  # ellipse
        return ((px - cx) / half_w) ** 2 + ((py - cy) / half_h) ** 2 <= 1.0
    if kind == 2:  # triangle: apex top-center, base at the bottom edge
        inside_y = (py >= cy - half_h) & (py <= cy + half_h)
        frac = np.clip((py - (cy - half_h)) / (2.0 * half_h), 0.0, 1.0)
        return inside_y & (np.abs(px - cx) <= frac * half_w)
    raise ConfigError(f"unknown shape kind {kind}")


def synth_dataset(seed: int, count: int, image_size: int = 64, classes: int = 3):
    """Deterministic list of (image Tensor (1, 1, S, S), [(BBox, class_id)])."""
    if count < 1:
        raise ConfigError("count must be >= 1")
    if classes < 1 or classes > len(CLASS_NAMES):
        raise ConfigError(f"classes must be in [1, {len(CLASS_NAMES)}]")
    if image_size < 16:
        raise ConfigError("image size must be >= 16")
    rng = np.random.Generator(np.random.PCG64(seed))
    # half-extents are integers and centers sit on pixel centers (k + 0.5), so
    # every shape's extreme points coincide with pixel centers and the
    # rasterized tight box matches the analytic box to within one pixel
    min_half = max(4, image_size // 8)
    max_half = image_size // 4

    samples = []
    for _ in range(count):
        img = rng.uniform(_NOISE_LOW, _NOISE_HIGH, size=(image_size, image_size))
        targets: list[tuple[BBox, int]] = []
        wanted = int(rng.integers(1, 5))
        for _ in range(wanted):
            placed = False
            for _attempt in range(40):
                half_w = int(rng.integers(min_half, max_half + 1))
                half_h = int(rng.integers(min_half, max_half + 1))
                cx = int(rng.integers(half_w, image_size - half_w)) + 0.5
                cy = int(rng.integers(half_h, image_size - half_h)) + 0.5
                box = BBox(cx - half_w, cy - half_h, cx + half_w, cy + half_h)
                clash = any(
                    box.x1 < other.x2 + 2 and other.x1 < box.x2 + 2
                    and box.y1 < other.y2 + 2 and other.y1 < box.y2 + 2
                    for other, _ in targets
                )
                if clash:
                    continue
                kind = int(rng.integers(0, classes))
                value = float(rng.uniform(_SHAPE_LOW, _SHAPE_HIGH))
                mask = _rasterize(kind, cx, cy, float(half_w), float(half_h), image_size)
                img[mask] = value
                targets.append((box, kind))
                placed = True
                break
            if not placed:
                break
        if not targets:
            # cannot happen with the sizes above, but the contract is >= 1 shape
            half = float(min_half)
            cx = cy = image_size // 2 + 0.5
            mask = _rasterize(0, cx, cy, half, half, image_size)
            img[mask] = 0.9
            targets.append((BBox(cx - half, cy - half, cx + half, cy + half), 0))
        samples.append((Tensor(img[None, None, :, :]), targets))
    return samples
