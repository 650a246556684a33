"""Cross-scale fusion: lateral channel unification, top-down semantic
propagation, bottom-up detail propagation.

Every stage is first laterally projected (1x1) to a shared width so that
adjacent-stage sums are defined; fusion blocks are residual 3x3 conv pairs
with the second conv zero-initialised, making each block the identity at
initialisation.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from . import numerics as nx

FUSED_CHANNELS = 64


def init_cfm_params(rng: np.random.Generator,
                    in_channels: Sequence[int] = (32, 64, 128, 256),
                    cf: int = FUSED_CHANNELS) -> dict[str, np.ndarray]:
    def dense(fan_in, fan_out):
        return rng.normal(0.0, fan_in ** -0.5, (fan_in, fan_out))

    p: dict[str, np.ndarray] = {}
    for i, c in enumerate(in_channels, start=1):
        p[f"lat{i}_w"] = dense(c, cf)
        p[f"lat{i}_b"] = np.zeros(cf)
    for name in [f"td{i}" for i in (1, 2, 3)] + [f"bu{i}" for i in (2, 3, 4)]:
        p[f"{name}.conv1_w"] = dense(9 * cf, cf)
        p[f"{name}.conv1_b"] = np.zeros(cf)
        p[f"{name}.conv2_w"] = np.zeros((9 * cf, cf))    # identity at init
        p[f"{name}.conv2_b"] = np.zeros(cf)
    for i in (2, 3, 4):
        p[f"down{i}_w"] = dense(9 * cf, cf)
        p[f"down{i}_b"] = np.zeros(cf)
    return p


def fusion_block(p: Mapping[str, nx.Tensor], name: str, x: nx.Tensor,
                 h: int, w: int) -> nx.Tensor:
    """x + conv3x3(relu(conv3x3(x))); identity at init (second conv zero)."""
    y = nx.relu(nx.conv2d(x, h, w, p[f"{name}.conv1_w"], p[f"{name}.conv1_b"],
                          ksize=3, stride=1, pad=1))
    y = nx.conv2d(y, h, w, p[f"{name}.conv2_w"], p[f"{name}.conv2_b"],
                  ksize=3, stride=1, pad=1)
    return nx.add(x, y)


def lateral(p: Mapping[str, nx.Tensor], modulated: Sequence[nx.Tensor]) -> list[nx.Tensor]:
    return [nx.linear(v, p[f"lat{i}_w"], p[f"lat{i}_b"])
            for i, v in enumerate(modulated, start=1)]


def top_down(p: Mapping[str, nx.Tensor], modulated: Sequence[nx.Tensor],
             dims: Sequence[tuple[int, int]]) -> list[nx.Tensor]:
    """Coarse-to-fine chain: stage 4 is its lateral projection; finer stages
    add the upsampled next-coarser result before a fusion block."""
    lat = lateral(p, modulated)
    down: list[nx.Tensor | None] = [None] * 4
    down[3] = lat[3]
    for i in (2, 1, 0):
        h, w = dims[i]
        ch, cw = dims[i + 1]
        if (h, w) != (2 * ch, 2 * cw):
            raise nx.ShapeMismatchError(
                f"top_down: stage {i + 1} dims {dims[i]} are not 2x stage {i + 2} dims {dims[i + 1]}")
        merged = nx.add(lat[i], nx.upsample2x(down[i + 1], ch, cw))
        down[i] = fusion_block(p, f"td{i + 1}", merged, h, w)
    return down


def bottom_up(p: Mapping[str, nx.Tensor], down: Sequence[nx.Tensor],
              dims: Sequence[tuple[int, int]]) -> list[nx.Tensor]:
    """Fine-to-coarse chain feeding each stage the strided reduction of the
    previously refined finer stage."""
    if len(down) != 4 or any(d is None for d in down):
        raise ValueError("bottom_up requires the complete top-down chain")
    up: list[nx.Tensor | None] = [None] * 4
    up[0] = down[0]
    for i in (1, 2, 3):
        fh, fw = dims[i - 1]
        reduced = nx.conv2d(up[i - 1], fh, fw, p[f"down{i + 1}_w"], p[f"down{i + 1}_b"],
                            ksize=3, stride=2, pad=1)
        h, w = dims[i]
        up[i] = fusion_block(p, f"bu{i + 1}", nx.add(down[i], reduced), h, w)
    return up


def fuse(p: Mapping[str, nx.Tensor], modulated: Sequence[nx.Tensor],
         dims: Sequence[tuple[int, int]], enabled: bool = True) -> list[nx.Tensor]:
    """Full fusion; when disabled, fall back to lateral pass-through so all
    downstream shape contracts still hold."""
    if not enabled:
        return lateral(p, modulated)
    return bottom_up(p, top_down(p, modulated, dims), dims)
