"""Progressive cross-modal modulation: survey, locate and verify attention
applied to each backbone stage, plus the variant registry (context-only,
parallel, sequential, progressive) and the ordering permutations of the
progressive form.

All three attentions share a pattern: visual queries attend linguistic
keys/values, the attention output is squashed by a sigmoid into a gate in
(0,1), and the gate multiplies the visual features.  Survey gates per
position and channel, locate per position (single channel, broadcast), and
verify per channel (pooled queries, broadcast over positions).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import numerics as nx
from .encoders import CueFeatures

VARIANTS = ("context-only", "parallel", "sequential", "progressive")
ORDERINGS = ("S-L-V", "S-V-L", "L-S-V", "L-V-S", "V-S-L", "V-L-S")


@dataclass(frozen=True)
class ModulatorConfig:
    variant: str = "progressive"
    ordering: str = "S-L-V"       # progressive only; ignored otherwise
    enabled: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown modulator variant {self.variant!r}; "
                             f"expected one of {VARIANTS}")
        if self.variant == "progressive" and self.ordering not in ORDERINGS:
            raise ValueError(f"unknown ordering {self.ordering!r}; "
                             f"expected one of {ORDERINGS}")


@dataclass
class StageModulationTrace:
    """Gates/attention maps recorded while modulating one stage.

    Gate tensors live in (0,1); attention maps are the pre-sigmoid values.
    Fields not produced by the active variant stay None; a disabled
    modulator yields ``identity=True`` with only the output set.
    """

    output: nx.Tensor
    context_gate: nx.Tensor | None = None      # (HW, C)
    spatial_gate: nx.Tensor | None = None      # (HW, 1)
    attribute_gate: nx.Tensor | None = None    # (1, C)
    context_attn: nx.Tensor | None = None      # (HW, C) pre-sigmoid
    spatial_attn: nx.Tensor | None = None      # (HW, 1) pre-sigmoid
    attribute_attn: nx.Tensor | None = None    # (C, 1) pre-sigmoid
    identity: bool = False


def init_stage_params(rng: np.random.Generator, c: int, d: int = 64) -> dict[str, np.ndarray]:
    def dense(fan_in, fan_out):
        return rng.normal(0.0, fan_in ** -0.5, (fan_in, fan_out))

    return {
        "survey.vis_w": dense(c, c), "survey.vis_b": np.zeros(c),
        "survey.txt_w": dense(d, c), "survey.txt_b": np.zeros(c),
        "survey.wq": dense(c, c), "survey.wk": dense(c, c), "survey.wv": dense(c, c),
        "survey.out_w": dense(c, c), "survey.out_b": np.zeros(c),
        "locate.sal_w": dense(c, 1), "locate.sal_b": np.zeros(1),
        "locate.txt_w": dense(d, 1), "locate.txt_b": np.zeros(1),
        "locate.wq": dense(1, 1), "locate.wk": dense(1, 1), "locate.wv": dense(1, 1),
        "locate.out_w": dense(c, c), "locate.out_b": np.zeros(c),
        "verify.txt_w": dense(d, 1), "verify.txt_b": np.zeros(1),
        "verify.wq": dense(1, 1), "verify.wk": dense(1, 1), "verify.wv": dense(1, 1),
    }


def _require_tokens(feats: nx.Tensor, what: str) -> None:
    if feats.shape[0] == 0:
        raise ValueError(f"{what} attention needs at least one linguistic token")


def survey_attend(p: Mapping[str, nx.Tensor], visual: nx.Tensor,
                  context: nx.Tensor) -> tuple[nx.Tensor, nx.Tensor, nx.Tensor]:
    """Context-conditioned gating; returns (output, pre-sigmoid map, gate)."""
    _require_tokens(context, "survey")
    c = visual.shape[1]
    vis = nx.linear(visual, p["survey.vis_w"], p["survey.vis_b"])
    txt = nx.linear(context, p["survey.txt_w"], p["survey.txt_b"])
    attn = nx.attention(nx.matmul(vis, p["survey.wq"]),
                        nx.matmul(txt, p["survey.wk"]),
                        nx.matmul(txt, p["survey.wv"]), scale=c ** -0.5)
    gate = nx.sigmoid(attn)
    out = nx.linear(nx.mul(visual, gate), p["survey.out_w"], p["survey.out_b"])
    return out, attn, gate


def _locate_gate(p: Mapping[str, nx.Tensor], visual: nx.Tensor,
                 spatial: nx.Tensor) -> tuple[nx.Tensor, nx.Tensor]:
    _require_tokens(spatial, "locate")
    saliency = nx.linear(visual, p["locate.sal_w"], p["locate.sal_b"])   # (HW, 1)
    txt = nx.linear(spatial, p["locate.txt_w"], p["locate.txt_b"])       # (Ns, 1)
    attn = nx.attention(nx.matmul(saliency, p["locate.wq"]),
                        nx.matmul(txt, p["locate.wk"]),
                        nx.matmul(txt, p["locate.wv"]), scale=1.0)
    return attn, nx.sigmoid(attn)


def locate_attend(p: Mapping[str, nx.Tensor], visual: nx.Tensor,
                  spatial: nx.Tensor) -> tuple[nx.Tensor, nx.Tensor, nx.Tensor]:
    """Spatial-cue gating on a one-channel saliency map, broadcast over
    channels; returns (output, pre-sigmoid map, gate)."""
    attn, gate = _locate_gate(p, visual, spatial)
    out = nx.linear(nx.mul(visual, gate), p["locate.out_w"], p["locate.out_b"])
    return out, attn, gate


def _verify_gate(p: Mapping[str, nx.Tensor], visual: nx.Tensor,
                 attribute: nx.Tensor) -> tuple[nx.Tensor, nx.Tensor]:
    _require_tokens(attribute, "verify")
    pooled = nx.mean_reduce(visual, axis=0, keepdims=True)               # (1, C)
    queries = nx.transpose(pooled)                                       # (C, 1)
    txt = nx.linear(attribute, p["verify.txt_w"], p["verify.txt_b"])     # (Na, 1)
    attn = nx.attention(nx.matmul(queries, p["verify.wq"]),
                        nx.matmul(txt, p["verify.wk"]),
                        nx.matmul(txt, p["verify.wv"]), scale=1.0)       # (C, 1)
    return attn, nx.sigmoid(nx.transpose(attn))                          # gate (1, C)


def verify_attend(p: Mapping[str, nx.Tensor], visual: nx.Tensor,
                  attribute: nx.Tensor) -> tuple[nx.Tensor, nx.Tensor, nx.Tensor]:
    """Attribute-cue gating per channel via pooled channel queries; no
    trailing projection; returns (output, pre-sigmoid map, gate)."""
    attn, gate = _verify_gate(p, visual, attribute)
    return nx.mul(visual, gate), attn, gate


def modulate_stage(p: Mapping[str, nx.Tensor], visual: nx.Tensor,
                   cues: CueFeatures, config: ModulatorConfig) -> tuple[nx.Tensor, StageModulationTrace]:
    """Apply the configured modulator variant to one pyramid stage."""
    if not config.enabled:
        return visual, StageModulationTrace(output=visual, identity=True)

    if config.variant == "context-only":
        out, attn, gate = survey_attend(p, visual, cues.context)
        return out, StageModulationTrace(output=out, context_attn=attn, context_gate=gate)

    if config.variant == "parallel":
        s_attn, s_gate = _locate_gate(p, visual, cues.spatial)
        a_attn, a_gate = _verify_gate(p, visual, cues.attribute)
        gated = nx.mul(nx.mul(visual, s_gate), a_gate)
        out = nx.linear(gated, p["locate.out_w"], p["locate.out_b"])
        return out, StageModulationTrace(output=out,
                                         spatial_attn=s_attn, spatial_gate=s_gate,
                                         attribute_attn=a_attn, attribute_gate=a_gate)

    if config.variant == "sequential":
        mid, s_attn, s_gate = locate_attend(p, visual, cues.spatial)
        out, a_attn, a_gate = verify_attend(p, mid, cues.attribute)
        return out, StageModulationTrace(output=out,
                                         spatial_attn=s_attn, spatial_gate=s_gate,
                                         attribute_attn=a_attn, attribute_gate=a_gate)

    trace = StageModulationTrace(output=visual)
    x = visual
    for step in config.ordering.split("-"):
        if step == "S":
            x, trace.context_attn, trace.context_gate = survey_attend(p, x, cues.context)
        elif step == "L":
            x, trace.spatial_attn, trace.spatial_gate = locate_attend(p, x, cues.spatial)
        else:
            x, trace.attribute_attn, trace.attribute_gate = verify_attend(p, x, cues.attribute)
    trace.output = x
    return x, trace
