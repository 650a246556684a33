"""Exact box/mask geometry and dataset-level evaluation metrics.

Boxes are corner tuples (x1, y1, x2, y2) carrying a unit tag; masks follow
the unit-cell pixel convention (a single foreground pixel has area 1).
All functions here are plain arithmetic, independent of the tensor engine,
so they double as oracles for the differentiable loss implementations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

PR_THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)


class EmptyMask:
    """Distinguished result of ``mask_to_box`` on an all-background mask."""

    def __repr__(self):
        return "EmptyMask"


EMPTY = EmptyMask()


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with corner coordinates, canonicalised on creation."""

    x1: float
    y1: float
    x2: float
    y2: float
    unit: str = "pixel"  # "pixel" or "normalized"

    def __post_init__(self):
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not math.isfinite(v):
                raise ValueError(f"non-finite box coordinate: {self}")
        if self.x1 > self.x2:
            lo, hi = self.x2, self.x1
            object.__setattr__(self, "x1", lo)
            object.__setattr__(self, "x2", hi)
        if self.y1 > self.y2:
            lo, hi = self.y2, self.y1
            object.__setattr__(self, "y1", lo)
            object.__setattr__(self, "y2", hi)

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def to_cxcywh(self) -> tuple[float, float, float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0,
                self.x2 - self.x1, self.y2 - self.y1)

    @staticmethod
    def from_cxcywh(cx: float, cy: float, w: float, h: float, unit: str = "normalized") -> "Box":
        return Box(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0, unit)

    def scaled(self, factor: float, unit: str) -> "Box":
        return Box(self.x1 * factor, self.y1 * factor,
                   self.x2 * factor, self.y2 * factor, unit)


def box_iou_giou(a: Box, b: Box) -> tuple[float, float]:
    """IoU and generalized IoU of two canonical boxes; giou in [-1, 1]."""
    ix = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = ix * iy
    union = a.area + b.area - inter
    iou = inter / union if union > 0 else 0.0
    hx = max(a.x2, b.x2) - min(a.x1, b.x1)
    hy = max(a.y2, b.y2) - min(a.y1, b.y1)
    hull = hx * hy
    giou = iou - ((hull - union) / hull if hull > 0 else 0.0)
    return iou, giou


def mask_to_box(mask: np.ndarray):
    """Minimal enclosing rectangle of a binary H x W mask, in pixel units.

    Uses the unit-cell convention: x2/y2 are one past the last foreground
    column/row.  Returns ``EMPTY`` when no pixel is set.
    """
    mask = np.asarray(mask)
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return EMPTY
    cols = np.flatnonzero(mask.any(axis=0))
    return Box(float(cols[0]), float(rows[0]),
               float(cols[-1] + 1), float(rows[-1] + 1), "pixel")


def mask_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Pixel-count IoU; both empty -> 1 by convention, one empty -> 0."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    inter = np.count_nonzero(pred & gt)
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return inter / union


def mask_intersection_union(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return (float(np.count_nonzero(pred & gt)), float(np.count_nonzero(pred | gt)))


def box_intersection_union(a: Box, b: Box) -> tuple[float, float]:
    ix = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = ix * iy
    return inter, a.area + b.area - inter


@dataclass(frozen=True)
class TrackMetrics:
    """Precision@X, overall IoU and mean IoU for one evaluation track."""

    precision_at: dict[float, float]
    oiou: float
    miou: float

    def row(self) -> list[float]:
        return [self.precision_at[x] for x in PR_THRESHOLDS] + [self.oiou, self.miou]


@dataclass(frozen=True)
class MetricsReport:
    rec: TrackMetrics
    res: TrackMetrics
    res_box: TrackMetrics
    count: int


def dataset_metrics(ious: Sequence[float],
                    inter_union: Iterable[tuple[float, float]]) -> TrackMetrics:
    """Aggregate per-sample IoUs into Pr@X (IoU >= X), mIoU and oIoU."""
    ious = list(ious)
    pairs = list(inter_union)
    if not ious or len(ious) != len(pairs):
        raise ValueError("dataset_metrics needs one (intersection, union) pair per IoU")
    pr = {x: sum(1 for v in ious if v >= x) / len(ious) for x in PR_THRESHOLDS}
    total_i = sum(i for i, _ in pairs)
    total_u = sum(u for _, u in pairs)
    oiou = total_i / total_u if total_u > 0 else 1.0
    return TrackMetrics(pr, oiou, sum(ious) / len(ious))
