"""Attention-map export: per-stage gate heatmaps as 64x64 grayscale PGMs."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .. import numerics as nx
from ..lingparse import decouple_expression
from ..model import GroundingModel
from ..synthdata import Sample, write_pgm

EXPORT_SIZE = 64


def nearest_resize(arr: np.ndarray, out_h: int = EXPORT_SIZE,
                   out_w: int = EXPORT_SIZE) -> np.ndarray:
    h, w = arr.shape
    rows = (np.arange(out_h) * h) // out_h
    cols = (np.arange(out_w) * w) // out_w
    return arr[rows][:, cols]


def _to_pgm(path: Path, values: np.ndarray) -> None:
    # linear map [0,1] -> [0,255]
    write_pgm(path, np.clip(values, 0.0, 1.0) * 255.0)


def export_attention(model: GroundingModel, sample: Sample, out_dir: Path) -> list[Path]:
    """Write every recorded gate of every stage; the progressive variant
    yields three files per stage, twelve per sample."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with nx.no_grad():
        out = model.forward(sample.image, decouple_expression(sample.expression))
    written: list[Path] = []
    for idx, (trace, (h, w)) in enumerate(zip(out.traces, out.dims), start=1):
        if trace.context_gate is not None:
            heat = trace.context_gate.data.mean(axis=1).reshape(h, w)
            path = out_dir / f"{sample.sample_id}_stage{idx}_context.pgm"
            _to_pgm(path, nearest_resize(heat))
            written.append(path)
        if trace.spatial_gate is not None:
            heat = trace.spatial_gate.data.reshape(h, w)
            path = out_dir / f"{sample.sample_id}_stage{idx}_spatial.pgm"
            _to_pgm(path, nearest_resize(heat))
            written.append(path)
        if trace.attribute_gate is not None:
            strip = trace.attribute_gate.data.reshape(1, -1)   # channel bar strip
            path = out_dir / f"{sample.sample_id}_stage{idx}_attribute.pgm"
            _to_pgm(path, nearest_resize(strip))
            written.append(path)
    return written
