"""Training objective: box regression (smooth-L1 + GIoU), mask prediction
(cross-entropy + Dice), box-mask consistency, and the weighted total.

All loss functions build differentiable graphs over the prediction tensors;
targets are constants.  The consistency term treats the mask-derived
rectangle as a constant (no gradient flows into the mask through it), so it
pulls the box head toward the mask head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .geometry import EMPTY, Box, mask_to_box

DEFAULT_LAMBDAS = (1.0, 0.5, 0.1)
SMOOTH_L1_BETA = 1.0
BOX_SMOOTH_L1_WEIGHT = 10.0
DICE_EPS = 1.0
MASK_SIDE = 64


@dataclass(frozen=True)
class LossReport:
    """Scalar values of every loss component plus the weighted total."""

    box_smooth_l1: float
    box_giou: float
    box: float
    mask_ce: float
    mask_dice: float
    mask: float
    cons: float
    cons_skipped: bool
    lambdas: tuple[float, float, float]
    total: float


def smooth_l1(pred: nx.Tensor, target: np.ndarray,
              beta: float = SMOOTH_L1_BETA) -> nx.Tensor:
    """Per-coordinate huber with threshold beta, summed over coordinates."""
    diff = pred - nx.Tensor(np.asarray(target, dtype=float))
    magnitude = nx.maximum(diff, -diff)
    clipped = nx.minimum(magnitude, beta)
    per_coord = nx.mul(nx.mul(clipped, clipped), 0.5 / beta) + (magnitude - clipped)
    return nx.sum_reduce(per_coord)


def _corners(box_cxcywh: nx.Tensor) -> tuple[nx.Tensor, ...]:
    cx = nx.slice_axis(box_cxcywh, 0, 1)
    cy = nx.slice_axis(box_cxcywh, 1, 2)
    w = nx.slice_axis(box_cxcywh, 2, 3)
    h = nx.slice_axis(box_cxcywh, 3, 4)
    return cx - w * 0.5, cy - h * 0.5, cx + w * 0.5, cy + h * 0.5


def giou_tensor(pred: nx.Tensor, target: np.ndarray) -> nx.Tensor:
    """Differentiable GIoU between a predicted (cx, cy, w, h) box and a
    constant target in the same parameterisation."""
    px1, py1, px2, py2 = _corners(pred)
    t = np.asarray(target, dtype=float)
    tx1, ty1 = t[0] - t[2] / 2.0, t[1] - t[3] / 2.0
    tx2, ty2 = t[0] + t[2] / 2.0, t[1] + t[3] / 2.0
    iw = nx.relu(nx.minimum(px2, tx2) - nx.maximum(px1, tx1))
    ih = nx.relu(nx.minimum(py2, ty2) - nx.maximum(py1, ty1))
    inter = nx.mul(iw, ih)
    area_p = nx.mul(px2 - px1, py2 - py1)
    union = area_p + (t[2] * t[3]) - inter
    hull = nx.mul(nx.maximum(px2, tx2) - nx.minimum(px1, tx1),
                  nx.maximum(py2, ty2) - nx.minimum(py1, ty1))
    giou = inter / union - (hull - union) / hull
    return nx.reshape(giou, ())


def _validate_gt_box(target: np.ndarray) -> np.ndarray:
    t = np.asarray(target, dtype=float)
    if t.shape != (4,) or not np.all(np.isfinite(t)):
        raise ValueError(f"ground-truth box must be 4 finite values, got {target!r}")
    if t[2] <= 0 or t[3] <= 0:
        raise ValueError(f"ground-truth box needs positive width/height, got {t}")
    return t


def box_loss(pred: nx.Tensor, target) -> tuple[nx.Tensor, nx.Tensor, nx.Tensor]:
    """10 * smoothL1 + (1 - GIoU); returns (loss, smoothL1 part, GIoU part)."""
    t = _validate_gt_box(target)
    sl1 = smooth_l1(pred, t)
    giou_part = 1.0 - giou_tensor(pred, t)
    return nx.add(nx.mul(sl1, BOX_SMOOTH_L1_WEIGHT), giou_part), sl1, giou_part


def _foreground_prob(scores: nx.Tensor) -> nx.Tensor:
    return nx.slice_axis(nx.softmax(scores, axis=-1), 1, 2, axis=1)   # (N, 1)


def mask_loss(scores: nx.Tensor, gt_mask: np.ndarray,
              eps: float = DICE_EPS) -> tuple[nx.Tensor, nx.Tensor, nx.Tensor]:
    """Mean 2-class cross-entropy + Dice on foreground probabilities,
    equally weighted; returns (loss, ce, dice)."""
    gt = np.asarray(gt_mask)
    n = gt.size
    if scores.shape != (n, 2):
        raise nx.ShapeMismatchError(
            f"mask_loss: scores {scores.shape} do not match mask with {n} pixels")
    target = gt.reshape(n, 1).astype(float)

    s0 = nx.slice_axis(scores, 0, 1, axis=1)
    s1 = nx.slice_axis(scores, 1, 2, axis=1)
    peak = nx.maximum(s0, s1)
    logsumexp = peak + nx.log(nx.exp(s0 - peak) + nx.exp(s1 - peak))
    picked = nx.add(nx.mul(s0, 1.0 - target), nx.mul(s1, target))
    ce = nx.mean_reduce(logsumexp - picked)

    fg = _foreground_prob(scores)
    inter = nx.sum_reduce(nx.mul(fg, target))
    denom = nx.sum_reduce(fg) + float(target.sum())
    dice = 1.0 - (nx.mul(inter, 2.0) + eps) / (denom + eps)
    dice = nx.reshape(dice, ())
    return nx.add(ce, dice), ce, dice


def mask_derived_box(scores_data: np.ndarray) -> Box | None:
    """Binarise foreground probability at 0.5 and wrap the minimal enclosing
    rectangle, converted to normalized units; None for an empty mask."""
    logits = np.asarray(scores_data)
    fg = logits[:, 1] > logits[:, 0]      # softmax fg prob above 0.5
    box = mask_to_box(fg.reshape(MASK_SIDE, MASK_SIDE))
    if box is EMPTY:
        return None
    return box.scaled(1.0 / MASK_SIDE, "normalized")


def cons_loss(pred_box: nx.Tensor, scores: nx.Tensor,
              derived: Box | None = None) -> tuple[nx.Tensor | None, bool]:
    """Box-mask consistency: 10 * smoothL1 + (1 - GIoU) against the
    mask-derived rectangle (held constant).  Returns (loss, skipped); an
    empty binarised mask skips the term."""
    if derived is None:
        derived = mask_derived_box(scores.data)
    if derived is None:
        return None, True
    target = np.asarray(derived.to_cxcywh(), dtype=float)
    loss, _, _ = box_loss(pred_box, target)
    return loss, False


def total_loss(box_terms: tuple[nx.Tensor, nx.Tensor, nx.Tensor],
               mask_terms: tuple[nx.Tensor, nx.Tensor, nx.Tensor],
               cons_term: nx.Tensor | None, cons_skipped: bool,
               lambdas=DEFAULT_LAMBDAS) -> tuple[nx.Tensor, LossReport]:
    """Weighted sum of the three objectives; returns the differentiable
    total and a scalar report."""
    l1, l2, l3 = (float(v) for v in lambdas)
    if min(l1, l2, l3) < 0:
        raise ValueError(f"loss weights must be non-negative, got {lambdas}")
    box_t, sl1_t, giou_t = box_terms
    mask_t, ce_t, dice_t = mask_terms
    total = nx.mul(box_t, l1) + nx.mul(mask_t, l2)
    cons_value = 0.0
    if cons_term is not None:
        total = total + nx.mul(cons_term, l3)
        cons_value = cons_term.item()
    report = LossReport(
        box_smooth_l1=sl1_t.item(), box_giou=giou_t.item(), box=box_t.item(),
        mask_ce=ce_t.item(), mask_dice=dice_t.item(), mask=mask_t.item(),
        cons=cons_value, cons_skipped=cons_skipped,
        lambdas=(l1, l2, l3),
        total=box_t.item() * l1 + mask_t.item() * l2 + cons_value * l3,
    )
    return total, report
