"""Trainable stand-in encoders: a small transformer for cue text and a
patch-embedding backbone emitting a 4-stage feature pyramid.

The backbone's per-stage mixing blocks are residual (depthwise 3x3 then a
zero-initialised pointwise projection), so at initialisation every stage is
a pure strided projection and receptive fields stay patch-aligned.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import numerics as nx
from .lingparse import MAX_TOKENS, VOCAB_SIZE, LinguisticCues

D_MODEL = 64
N_HEADS = 4
N_LAYERS = 2
FFN_WIDTH = 128
IMAGE_SIZE = 64
PATCH = 4
CHANNELS = (32, 64, 128, 256)


@dataclass
class CueFeatures:
    """Per-token features for the three cue spans, each (N x D)."""

    context: nx.Tensor
    spatial: nx.Tensor
    attribute: nx.Tensor


@dataclass
class FeaturePyramid:
    """Four feature maps (H_i*W_i x C_i), finest first, with their dims."""

    stages: list[nx.Tensor]
    dims: list[tuple[int, int]]

    def validate(self) -> None:
        if len(self.stages) != 4:
            raise nx.ShapeMismatchError("pyramid must have exactly 4 stages")
        for i, (t, (h, w)) in enumerate(zip(self.stages, self.dims)):
            if t.shape != (h * w, CHANNELS[i]):
                raise nx.ShapeMismatchError(
                    f"pyramid stage {i + 1}: shape {t.shape} != ({h * w}, {CHANNELS[i]})")
            if i:
                ph, pw = self.dims[i - 1]
                if (h, w) != (ph // 2, pw // 2) or CHANNELS[i] != 2 * CHANNELS[i - 1]:
                    raise nx.ShapeMismatchError(f"pyramid stage {i + 1} breaks the halving law")


def _dense(rng, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, fan_in ** -0.5, (fan_in, fan_out))


def init_text_params(rng: np.random.Generator) -> dict[str, np.ndarray]:
    p: dict[str, np.ndarray] = {
        "embed": rng.normal(0.0, 0.02, (VOCAB_SIZE, D_MODEL)),
        "pos": rng.normal(0.0, 0.02, (MAX_TOKENS, D_MODEL)),
    }
    for layer in range(N_LAYERS):
        pre = f"l{layer}."
        p[pre + "ln1_g"] = np.ones(D_MODEL)
        p[pre + "ln1_b"] = np.zeros(D_MODEL)
        for name in ("wq", "wk", "wv", "wo"):
            p[pre + name] = _dense(rng, D_MODEL, D_MODEL)
            p[pre + name.replace("w", "b")] = np.zeros(D_MODEL)
        p[pre + "ln2_g"] = np.ones(D_MODEL)
        p[pre + "ln2_b"] = np.zeros(D_MODEL)
        p[pre + "ffn_w1"] = _dense(rng, D_MODEL, FFN_WIDTH)
        p[pre + "ffn_b1"] = np.zeros(FFN_WIDTH)
        p[pre + "ffn_w2"] = _dense(rng, FFN_WIDTH, D_MODEL)
        p[pre + "ffn_b2"] = np.zeros(D_MODEL)
    return p


def _self_attention(p: Mapping[str, nx.Tensor], pre: str, x: nx.Tensor) -> nx.Tensor:
    n = x.shape[0]
    dh = D_MODEL // N_HEADS

    def heads(t):
        return nx.transpose(nx.reshape(t, (n, N_HEADS, dh)), (1, 0, 2))

    q = heads(nx.linear(x, p[pre + "wq"], p[pre + "bq"]))
    k = heads(nx.linear(x, p[pre + "wk"], p[pre + "bk"]))
    v = heads(nx.linear(x, p[pre + "wv"], p[pre + "bv"]))
    ctx = nx.attention(q, k, v, scale=dh ** -0.5)            # (H, n, dh)
    merged = nx.reshape(nx.transpose(ctx, (1, 0, 2)), (n, D_MODEL))
    return nx.linear(merged, p[pre + "wo"], p[pre + "bo"])


def _encode_tokens(p: Mapping[str, nx.Tensor], token_ids) -> nx.Tensor:
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("cannot encode an empty token sequence")
    if ids.min() < 0 or ids.max() >= VOCAB_SIZE:
        raise ValueError(f"token id out of range [0, {VOCAB_SIZE})")
    x = nx.add(nx.gather_rows(p["embed"], ids),
               nx.slice_axis(p["pos"], 0, ids.size, axis=0))
    for layer in range(N_LAYERS):
        pre = f"l{layer}."
        normed = nx.layer_norm(x, p[pre + "ln1_g"], p[pre + "ln1_b"])
        x = nx.add(x, _self_attention(p, pre, normed))
        normed = nx.layer_norm(x, p[pre + "ln2_g"], p[pre + "ln2_b"])
        ffn = nx.linear(nx.relu(nx.linear(normed, p[pre + "ffn_w1"], p[pre + "ffn_b1"])),
                        p[pre + "ffn_w2"], p[pre + "ffn_b2"])
        x = nx.add(x, ffn)
    return x


def encode_text(p: Mapping[str, nx.Tensor], cues: LinguisticCues) -> CueFeatures:
    """Encode the three cue spans independently with shared parameters."""
    return CueFeatures(
        context=_encode_tokens(p, cues.context.tokens),
        spatial=_encode_tokens(p, cues.spatial.tokens),
        attribute=_encode_tokens(p, cues.attribute.tokens),
    )


def init_image_params(rng: np.random.Generator) -> dict[str, np.ndarray]:
    p: dict[str, np.ndarray] = {
        "patch_w": _dense(rng, PATCH * PATCH * 3, CHANNELS[0]),
        "patch_b": np.zeros(CHANNELS[0]),
    }
    for i, c in enumerate(CHANNELS, start=1):
        pre = f"s{i}."
        if i > 1:
            p[pre + "down_w"] = _dense(rng, 4 * CHANNELS[i - 2], c)
            p[pre + "down_b"] = np.zeros(c)
        p[pre + "dw_w"] = rng.normal(0.0, 1.0 / 3.0, (9, c))
        p[pre + "dw_b"] = np.zeros(c)
        p[pre + "pw_w"] = np.zeros((c, c))       # residual branch is zero at init
        p[pre + "pw_b"] = np.zeros(c)
    return p


def encode_image(p: Mapping[str, nx.Tensor], image) -> FeaturePyramid:
    """64x64x3 image in [0,1] -> 4-stage pyramid (finest 16x16x32)."""
    if isinstance(image, nx.Tensor):
        x = image
    else:
        arr = np.asarray(image)
        if arr.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
            raise nx.ShapeMismatchError(
                f"encode_image expects ({IMAGE_SIZE}, {IMAGE_SIZE}, 3), got {arr.shape}")
        x = nx.Tensor(arr.reshape(IMAGE_SIZE * IMAGE_SIZE, 3))
    if x.shape != (IMAGE_SIZE * IMAGE_SIZE, 3):
        raise nx.ShapeMismatchError(
            f"encode_image expects ({IMAGE_SIZE * IMAGE_SIZE}, 3) rows, got {x.shape}")

    h = w = IMAGE_SIZE
    stages: list[nx.Tensor] = []
    dims: list[tuple[int, int]] = []
    feat = nx.conv2d(x, h, w, p["patch_w"], p["patch_b"], ksize=PATCH, stride=PATCH)
    h = w = IMAGE_SIZE // PATCH
    for i in range(1, 5):
        pre = f"s{i}."
        if i > 1:
            feat = nx.conv2d(feat, h, w, p[pre + "down_w"], p[pre + "down_b"],
                             ksize=2, stride=2)
            h, w = h // 2, w // 2
        mixed = nx.linear(nx.depthwise_conv3x3(feat, h, w, p[pre + "dw_w"], p[pre + "dw_b"]),
                          p[pre + "pw_w"], p[pre + "pw_b"])
        feat = nx.add(feat, mixed)
        stages.append(feat)
        dims.append((h, w))
    pyramid = FeaturePyramid(stages, dims)
    pyramid.validate()
    return pyramid
