"""Axis-aligned 3D box arithmetic.

Boxes are stored as ``center`` + ``size`` (meters). Array helpers accept
``(N, 6)`` arrays laid out as ``[cx, cy, cz, sx, sy, sz]``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

# Lexicographic over (-/+ x, -/+ y, -/+ z); x varies slowest.
CORNER_SIGNS = np.array(list(itertools.product((-1.0, 1.0), repeat=3)))


@dataclass(frozen=True)
class AxisAlignedBox:
    center: tuple[float, float, float]
    size: tuple[float, float, float]

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        size = tuple(float(v) for v in self.size)
        if len(center) != 3 or len(size) != 3:
            raise ValueError("center and size must be 3-vectors")
        if not all(np.isfinite(center)) or not all(np.isfinite(size)):
            raise ValueError("box coordinates must be finite")
        if min(size) <= 0.0:
            raise ValueError(f"box size must be strictly positive, got {size}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)

    @classmethod
    def from_array(cls, arr: Sequence[float]) -> "AxisAlignedBox":
        arr = list(arr)
        if len(arr) != 6:
            raise ValueError("expected [cx, cy, cz, sx, sy, sz]")
        return cls(tuple(arr[:3]), tuple(arr[3:]))

    def to_array(self) -> np.ndarray:
        return np.array(self.center + self.size, dtype=np.float64)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.center) - np.asarray(self.size) / 2.0

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.center) + np.asarray(self.size) / 2.0

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def translated(self, offset: Sequence[float]) -> "AxisAlignedBox":
        return AxisAlignedBox(tuple(np.asarray(self.center) + np.asarray(offset)), self.size)


def box_iou(a: AxisAlignedBox, b: AxisAlignedBox) -> float:
    """Exact intersection-over-union of two axis-aligned boxes."""
    a_lo, a_hi, b_lo, b_hi = a.lo, a.hi, b.lo, b.hi
    overlap = np.minimum(a_hi, b_hi) - np.maximum(a_lo, b_lo)
    if np.any(overlap <= 0.0):
        return 0.0
    inter = float(np.prod(overlap))
    # volumes use the same hi - lo extents so that box_iou(a, a) == 1 exactly
    va = float(np.prod(a_hi - a_lo))
    vb = float(np.prod(b_hi - b_lo))
    return inter / (va + vb - inter)


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between ``(N, 6)`` and ``(M, 6)`` box arrays."""
    boxes_a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 6)
    boxes_b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 6)
    if np.any(boxes_a[:, 3:] <= 0) or np.any(boxes_b[:, 3:] <= 0):
        raise ValueError("box sizes must be strictly positive")
    a_lo = boxes_a[:, None, :3] - boxes_a[:, None, 3:] / 2.0
    a_hi = boxes_a[:, None, :3] + boxes_a[:, None, 3:] / 2.0
    b_lo = boxes_b[None, :, :3] - boxes_b[None, :, 3:] / 2.0
    b_hi = boxes_b[None, :, :3] + boxes_b[None, :, 3:] / 2.0
    overlap = np.clip(np.minimum(a_hi, b_hi) - np.maximum(a_lo, b_lo), 0.0, None)
    inter = np.prod(overlap, axis=-1)
    va = np.prod(a_hi - a_lo, axis=-1)
    vb = np.prod(b_hi - b_lo, axis=-1)
    return inter / (va + vb - inter)


def box_corners(b: AxisAlignedBox) -> np.ndarray:
    """Return the 8 corners as an ``(8, 3)`` array in lexicographic sign order."""
    return np.asarray(b.center) + CORNER_SIGNS * (np.asarray(b.size) / 2.0)


def corners_array(boxes: np.ndarray) -> np.ndarray:
    """Vectorized :func:`box_corners` for ``(N, 6)`` arrays, returns ``(N, 8, 3)``."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 6)
    return boxes[:, None, :3] + CORNER_SIGNS[None] * (boxes[:, None, 3:] / 2.0)


def geometric_attributes(boxes: np.ndarray) -> np.ndarray:
    """27-dim geometric attribute rows: center followed by the flattened corners."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 6)
    return np.concatenate([boxes[:, :3], corners_array(boxes).reshape(len(boxes), 24)], axis=1)


def nms(boxes: Sequence[AxisAlignedBox] | np.ndarray, scores: Sequence[float],
        iou_threshold: float) -> list[int]:
    """Greedy non-maximum suppression.

    Returns kept indices in descending score order; equal scores keep the
    lower index first.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError("iou_threshold must lie in (0, 1)")
    arr = _as_box_array(boxes)
    scores = np.asarray(scores, dtype=np.float64)
    if len(arr) != len(scores):
        raise ValueError("boxes and scores must have the same length")
    if len(arr) == 0:
        return []
    ious = iou_matrix(arr, arr)
    order = np.argsort(-scores, kind="stable")
    suppressed = np.zeros(len(arr), dtype=bool)
    keep: list[int] = []
    for i in order:
        if suppressed[i]:
            continue
        keep.append(int(i))
        suppressed |= ious[i] > iou_threshold
    return keep


def grounding_upper_bound(proposals: Sequence[AxisAlignedBox] | np.ndarray,
                          gt: AxisAlignedBox) -> float:
    """Best IoU any proposal achieves against the ground-truth box."""
    arr = _as_box_array(proposals)
    if len(arr) == 0:
        raise ValueError("grounding_upper_bound needs at least one proposal")
    return float(iou_matrix(arr, gt.to_array()[None]).max())


def _as_box_array(boxes) -> np.ndarray:
    if isinstance(boxes, np.ndarray):
        return boxes.reshape(-1, 6).astype(np.float64)
    return np.array([b.to_array() for b in boxes], dtype=np.float64).reshape(-1, 6)
