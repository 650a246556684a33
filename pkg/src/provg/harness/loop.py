"""Deterministic training loop and the two-track evaluator."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import threadpoolctl

from .. import losses
from .. import numerics as nx
from ..geometry import (EMPTY, Box, MetricsReport, box_intersection_union,
                        box_iou_giou, dataset_metrics, mask_intersection_union,
                        mask_iou, mask_to_box)
from ..lingparse import decouple_expression
from ..model import GroundingModel
from ..synthdata import CANVAS, Sample, read_dataset
from .checkpoint import save_checkpoint
from .config import RunConfig, lr_at
from .optim import AdamW

LOG_COLUMNS = ["step", "lr", "total", "box", "box_smooth_l1", "box_giou",
               "mask", "mask_ce", "mask_dice", "cons", "cons_skips", "wall_time"]


class TrainingDivergedError(RuntimeError):
    """Raised when a step produces a non-finite loss; names the step and the
    last finite component breakdown."""


@dataclass
class TrainResult:
    model: GroundingModel
    checkpoint_path: Path | None
    log_path: Path | None
    history: list[dict]


def _normalized_target(sample: Sample) -> np.ndarray:
    return np.asarray(sample.gt_box.scaled(1.0 / CANVAS, "normalized").to_cxcywh())


def _sample_loss(model: GroundingModel, sample: Sample, cues, lambdas):
    out = model.forward(sample.image, cues)
    box_terms = losses.box_loss(out.box, _normalized_target(sample))
    mask_terms = losses.mask_loss(out.mask_scores, sample.gt_mask)
    cons_term, skipped = losses.cons_loss(out.box, out.mask_scores)
    return losses.total_loss(box_terms, mask_terms, cons_term, skipped, lambdas)


def train(config: RunConfig, samples: list[Sample] | None = None, *,
          write_outputs: bool = True) -> TrainResult:
    """Run the full pipeline for ``config.steps`` optimizer steps.

    Deterministic in (config, seed): fixed initialisation, fixed data order.
    """
    if samples is None:
        samples = read_dataset(Path(config.dataset_dir))
    if not samples:
        raise ValueError(f"no samples found in {config.dataset_dir}")
    cues = [decouple_expression(s.expression) for s in samples]

    model = GroundingModel(config.modulator(), cfm_enabled=config.cfm_enabled,
                           lcm_enabled=config.lcm_enabled, fa_enabled=config.fa_enabled,
                           seed=config.seed)
    optimizer = AdamW(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    order_rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed,
                                                             spawn_key=(0xDA7A,)))
    queue: list[int] = []
    history: list[dict] = []
    started = time.perf_counter()

    with threadpoolctl.threadpool_limits(1):     # small GEMMs; threads only hurt
        for step in range(config.steps):
            batch = []
            for _ in range(config.batch_size):
                if not queue:
                    queue = list(order_rng.permutation(len(samples)))
                batch.append(queue.pop())
            optimizer.zero_grad()
            total = None
            box = mask = cons = sl1 = giou = ce = dice = 0.0
            skips = 0
            try:
                for idx in batch:
                    sample_total, report = _sample_loss(model, samples[idx],
                                                        cues[idx], config.lambdas)
                    total = sample_total if total is None else total + sample_total
                    box += report.box
                    sl1 += report.box_smooth_l1
                    giou += report.box_giou
                    mask += report.mask
                    ce += report.mask_ce
                    dice += report.mask_dice
                    cons += report.cons
                    skips += int(report.cons_skipped)
                total = nx.mul(total, 1.0 / len(batch))
                total.backward()
            except nx.NonFiniteValueError as e:
                raise TrainingDivergedError(
                    f"non-finite loss at step {step}: {e}; last finite components "
                    f"box={box:.4g} mask={mask:.4g} cons={cons:.4g}") from e
            lr = lr_at(step, config.steps, config.lr)
            optimizer.step(lr)
            n = len(batch)
            history.append({
                "step": step, "lr": lr, "total": total.item(),
                "box": box / n, "box_smooth_l1": sl1 / n, "box_giou": giou / n,
                "mask": mask / n, "mask_ce": ce / n, "mask_dice": dice / n,
                "cons": cons / n, "cons_skips": skips,
                "wall_time": time.perf_counter() - started,
            })

    ckpt_path = log_path = None
    if write_outputs:
        out_dir = Path(config.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt_path = out_dir / "checkpoint.ckpt"
        save_checkpoint(model, config, config.steps, ckpt_path)
        log_path = out_dir / "train_log.csv"
        with open(log_path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=LOG_COLUMNS)
            writer.writeheader()
            writer.writerows(history)
    return TrainResult(model, ckpt_path, log_path, history)


# -- evaluation ----------------------------------------------------------------

def predict(model: GroundingModel, sample: Sample) -> tuple[Box, np.ndarray]:
    """Inference for one sample: (pixel-space box, binary mask)."""
    with nx.no_grad():
        out = model.forward(sample.image, decouple_expression(sample.expression))
    box = Box.from_cxcywh(*out.box.data.tolist()).scaled(CANVAS, "pixel")
    return box, out.predicted_mask()


def evaluate_predictions(preds: list[tuple[Box, np.ndarray]],
                         samples: list[Sample]) -> MetricsReport:
    """Score (box, mask) predictions on the REC, RES and RES-box tracks."""
    if len(preds) != len(samples):
        raise ValueError("one prediction per sample required")
    rec_ious, rec_iu = [], []
    res_ious, res_iu = [], []
    resbox_ious, resbox_iu = [], []
    for (pred_box, pred_mask), sample in zip(preds, samples):
        iou, _ = box_iou_giou(pred_box, sample.gt_box)
        rec_ious.append(iou)
        rec_iu.append(box_intersection_union(pred_box, sample.gt_box))

        res_ious.append(mask_iou(pred_mask, sample.gt_mask))
        res_iu.append(mask_intersection_union(pred_mask, sample.gt_mask))

        derived = mask_to_box(pred_mask)
        if derived is EMPTY:
            resbox_ious.append(0.0)
            resbox_iu.append((0.0, sample.gt_box.area))
        else:
            iou, _ = box_iou_giou(derived, sample.gt_box)
            resbox_ious.append(iou)
            resbox_iu.append(box_intersection_union(derived, sample.gt_box))
    return MetricsReport(
        rec=dataset_metrics(rec_ious, rec_iu),
        res=dataset_metrics(res_ious, res_iu),
        res_box=dataset_metrics(resbox_ious, resbox_iu),
        count=len(samples),
    )


def evaluate(model: GroundingModel, samples: list[Sample]) -> MetricsReport:
    if not samples:
        raise ValueError("cannot evaluate on an empty dataset")
    with threadpoolctl.threadpool_limits(1):
        preds = [predict(model, s) for s in samples]
    return evaluate_predictions(preds, samples)


def format_report(report: MetricsReport) -> str:
    """Pretty table matching the Pr@0.5..Pr@0.9 / oIoU / mIoU column layout."""
    header = ["track"] + [f"Pr@{x}" for x in (0.5, 0.6, 0.7, 0.8, 0.9)] + ["oIoU", "mIoU"]
    rows = [("REC", report.rec), ("RES", report.res), ("RES-box", report.res_box)]
    lines = ["  ".join(f"{h:>8}" for h in header)]
    for name, track in rows:
        cells = [f"{name:>8}"] + [f"{v:8.4f}" for v in track.row()]
        lines.append("  ".join(cells))
    lines.append(f"samples: {report.count}")
    return "\n".join(lines)


def report_csv_rows(report: MetricsReport) -> list[dict]:
    rows = []
    for name, track in (("rec", report.rec), ("res", report.res),
                        ("res_box", report.res_box)):
        row = {"track": name, "oiou": track.oiou, "miou": track.miou,
               "count": report.count}
        for x, v in track.precision_at.items():
            row[f"pr@{x}"] = v
        rows.append(row)
    return rows
