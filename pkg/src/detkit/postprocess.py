"""Anchor-free grid decode, greedy NMS, and letterbox preprocessing.

A head tensor of shape (1, 5 + K, grid_h, grid_w) holds, per cell,
[tx, ty, tw, th, objectness, K class logits]. Decode turns each cell into a
candidate box: center ((col + sigmoid(tx)) stride, (row + sigmoid(ty)) stride),
size (e^tw stride, e^th stride), scored sigmoid(obj) * max_k sigmoid(cls_k).
``encode_box`` is the exact inverse of that transform and exists so decode
can be validated as a round trip.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .losses import BBox, iou
from .tensor import ConfigError, Tensor

_LOGIT_CAP = 60.0  # e^60 ~ 1e26; caps box sizes before the image-bounds clamp


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    score: float
    class_id: int

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ConfigError(f"score {self.score} outside [0, 1]")
        if self.class_id < 0:
            raise ConfigError("class id must be >= 0")


@dataclass(frozen=True)
class GridDecodeSpec:
    grid_h: int
    grid_w: int
    stride: float
    num_classes: int
    score_threshold: float = 0.25

    def __post_init__(self):
        if self.grid_h < 1 or self.grid_w < 1:
            raise ConfigError("grid dims must be >= 1")
        if self.stride <= 0:
            raise ConfigError("stride must be positive")
        if self.num_classes < 1:
            raise ConfigError("need at least one class")

    @property
    def channels(self) -> int:
        return 5 + self.num_classes

    @property
    def image_w(self) -> float:
        return self.grid_w * self.stride

    @property
    def image_h(self) -> float:
        return self.grid_h * self.stride


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def decode(head: Tensor, spec: GridDecodeSpec) -> list[Detection]:
    """Emit one detection per cell whose score clears the threshold, boxes
    clamped to the image bounds. Cells scan in row-major order."""
    if head.shape != (1, spec.channels, spec.grid_h, spec.grid_w):
        raise ConfigError(
            f"head shape {head.shape} does not match spec "
            f"(1, {spec.channels}, {spec.grid_h}, {spec.grid_w})"
        )
    p = head.data[0]
    s = spec.stride
    obj = _sigmoid(p[4])
    cls = _sigmoid(p[5:])
    best_cls = cls.argmax(axis=0)
    score = obj * cls.max(axis=0)

    cols = np.arange(spec.grid_w)[None, :]
    rows = np.arange(spec.grid_h)[:, None]
    cx = (cols + _sigmoid(p[0])) * s
    cy = (rows + _sigmoid(p[1])) * s
    bw = np.exp(np.minimum(p[2], _LOGIT_CAP)) * s
    bh = np.exp(np.minimum(p[3], _LOGIT_CAP)) * s

    out: list[Detection] = []
    for i in range(spec.grid_h):
        for j in range(spec.grid_w):
            if score[i, j] < spec.score_threshold:
                continue
            x1 = min(max(cx[i, j] - bw[i, j] / 2.0, 0.0), spec.image_w)
            x2 = min(max(cx[i, j] + bw[i, j] / 2.0, 0.0), spec.image_w)
            y1 = min(max(cy[i, j] - bh[i, j] / 2.0, 0.0), spec.image_h)
            y2 = min(max(cy[i, j] + bh[i, j] / 2.0, 0.0), spec.image_h)
            out.append(Detection(BBox(x1, y1, x2, y2), float(score[i, j]), int(best_cls[i, j])))
    return out


def encode_box(bbox: BBox, spec: GridDecodeSpec) -> tuple[int, int, float, float, float, float]:
    """Inverse of the decode transform: the cell (row, col) owning the box
    center plus the logits (tx, ty, tw, th) that decode back to the box."""
    cx, cy = bbox.center
    if not (0 <= cx <= spec.image_w and 0 <= cy <= spec.image_h):
        raise ConfigError("box center outside the image")
    if bbox.width <= 0 or bbox.height <= 0:
        raise ConfigError("cannot encode a degenerate box")
    col = min(int(cx / spec.stride), spec.grid_w - 1)
    row = min(int(cy / spec.stride), spec.grid_h - 1)
    fx = min(max(cx / spec.stride - col, 1e-9), 1.0 - 1e-9)
    fy = min(max(cy / spec.stride - row, 1e-9), 1.0 - 1e-9)
    tx = math.log(fx / (1.0 - fx))
    ty = math.log(fy / (1.0 - fy))
    tw = math.log(bbox.width / spec.stride)
    th = math.log(bbox.height / spec.stride)
    return row, col, tx, ty, tw, th


def nms(dets: list[Detection], iou_threshold: float = 0.45) -> list[Detection]:
    """Greedy class-aware suppression: repeatedly keep the best remaining
    detection and drop same-class detections overlapping it beyond the
    threshold. Ordering (and tie-breaks) are part of the contract: output is
    sorted by descending score, then ascending class id, then input order."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, dets[i].class_id, i))
    suppressed = [False] * len(dets)
    keep: list[Detection] = []
    for pos, i in enumerate(order):
        if suppressed[i]:
            continue
        keep.append(dets[i])
        for j in order[pos + 1:]:
            if suppressed[j] or dets[j].class_id != dets[i].class_id:
                continue
            if iou(dets[i].bbox, dets[j].bbox) > iou_threshold:
                suppressed[j] = True
    return keep


def letterbox(image: Tensor, target_h: int, target_w: int):
    """Aspect-preserving nearest-neighbor resize plus symmetric 0.5-valued
    padding. Returns (tensor, scale, (pad_x, pad_y)); a source point maps to
    (x * scale + pad_x, y * scale + pad_y)."""
    if target_h < 1 or target_w < 1:
        raise ConfigError("target dims must be >= 1")
    if image.h < 1 or image.w < 1:
        raise ConfigError("cannot letterbox an empty image")
    scale = min(target_h / image.h, target_w / image.w)
    new_h = min(target_h, max(1, round(image.h * scale)))
    new_w = min(target_w, max(1, round(image.w * scale)))

    src_rows = np.minimum((np.arange(new_h) + 0.5) / scale, image.h - 1).astype(int)
    src_cols = np.minimum((np.arange(new_w) + 0.5) / scale, image.w - 1).astype(int)
    resized = image.data[:, :, src_rows[:, None], src_cols[None, :]]

    pad_top = (target_h - new_h) // 2
    pad_left = (target_w - new_w) // 2
    out = np.full((image.n, image.c, target_h, target_w), 0.5, dtype=image.dtype)
    out[:, :, pad_top:pad_top + new_h, pad_left:pad_left + new_w] = resized
    return Tensor(out), scale, (pad_left, pad_top)


def box_to_letterboxed(bbox: BBox, scale: float, pads: tuple[int, int]) -> BBox:
    px, py = pads
    return BBox(bbox.x1 * scale + px, bbox.y1 * scale + py, bbox.x2 * scale + px, bbox.y2 * scale + py)


def box_from_letterboxed(bbox: BBox, scale: float, pads: tuple[int, int]) -> BBox:
    px, py = pads
    return BBox(
        (bbox.x1 - px) / scale, (bbox.y1 - py) / scale,
        (bbox.x2 - px) / scale, (bbox.y2 - py) / scale,
    )


def detections_to_json(dets: list[Detection]) -> str:
    """Serialize as [{"bbox": [x1, y1, x2, y2], "score": s, "class": k}, ...]."""
    rows = [
        {"bbox": [d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2], "score": d.score, "class": d.class_id}
        for d in dets
    ]
    return json.dumps(rows, indent=2, sort_keys=True)


def detections_from_json(text: str) -> list[Detection]:
    rows = json.loads(text)
    return [
        Detection(BBox(*row["bbox"]), float(row["score"]), int(row["class"]))
        for row in rows
    ]
