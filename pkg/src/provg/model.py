"""Full grounding network: parameter registry plus the per-sample forward
pass (cue features -> modulated pyramid -> fused stages -> decoded heads).

The registry always materialises every module's parameters regardless of
the active variant or ablation flags, so runs sharing a seed start from
identical weights no matter which cells of an ablation grid they belong to.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import cfm, encoders, lcd, pcm
from . import numerics as nx
from .lingparse import LinguisticCues

PARAM_SEED_KEY = 0x9E37


@dataclass
class ModelOutput:
    box: nx.Tensor                               # (4,) normalized cx, cy, w, h
    mask_scores: nx.Tensor                       # (4096, 2)
    traces: list[pcm.StageModulationTrace]
    stage_weights: nx.Tensor | None              # (1, 4) or None without FA
    decoded: lcd.DecodedStages
    dims: list[tuple[int, int]]

    def mask_score_map(self) -> np.ndarray:
        """(2, 64, 64) class score view of the flat mask scores."""
        side = encoders.IMAGE_SIZE
        return self.mask_scores.data.reshape(side, side, 2).transpose(2, 0, 1)

    def predicted_mask(self) -> np.ndarray:
        """Argmax foreground mask, (64, 64) bool."""
        side = encoders.IMAGE_SIZE
        s = self.mask_scores.data
        return (s[:, 1] > s[:, 0]).reshape(side, side)


class GroundingModel:
    """Owns the flat parameter registry and runs single-sample forwards."""

    def __init__(self, modulator: pcm.ModulatorConfig | None = None, *,
                 cfm_enabled: bool = True, lcm_enabled: bool = True,
                 fa_enabled: bool = True, seed: int = 0):
        self.modulator = modulator or pcm.ModulatorConfig()
        self.cfm_enabled = cfm_enabled
        self.lcm_enabled = lcm_enabled
        self.fa_enabled = fa_enabled
        self.seed = seed

        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(PARAM_SEED_KEY,)))
        flat: OrderedDict[str, nx.Tensor] = OrderedDict()

        def register(prefix: str, arrays: dict[str, np.ndarray]) -> dict[str, nx.Tensor]:
            view = {}
            for name, arr in arrays.items():
                t = nx.parameter(arr)
                flat[f"{prefix}.{name}"] = t
                view[name] = t
            return view

        self.text_params = register("text", encoders.init_text_params(rng))
        self.image_params = register("image", encoders.init_image_params(rng))
        self.pcm_params = [
            register(f"pcm.s{i + 1}", pcm.init_stage_params(rng, c))
            for i, c in enumerate(encoders.CHANNELS)
        ]
        self.cfm_params = register("cfm", cfm.init_cfm_params(rng))
        self.lcd_params = register("lcd", lcd.init_lcd_params(rng))
        self._flat = flat

    def parameters(self) -> OrderedDict[str, nx.Tensor]:
        return self._flat

    def zero_grad(self) -> None:
        for t in self._flat.values():
            t.zero_grad()

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._flat) ^ set(arrays)
        if missing:
            raise ValueError(f"parameter name mismatch: {sorted(missing)[:5]} ...")
        for name, tensor in self._flat.items():
            arr = np.asarray(arrays[name], dtype=tensor.data.dtype)
            if arr.shape != tensor.data.shape:
                raise ValueError(f"parameter {name}: shape {arr.shape} != {tensor.data.shape}")
            tensor.data = arr

    def forward(self, image, cues: LinguisticCues) -> ModelOutput:
        cue_feats = encoders.encode_text(self.text_params, cues)
        pyramid = encoders.encode_image(self.image_params, image)
        modulated, traces = [], []
        for stage_params, stage in zip(self.pcm_params, pyramid.stages):
            out, trace = pcm.modulate_stage(stage_params, stage, cue_feats, self.modulator)
            modulated.append(out)
            traces.append(trace)
        fused = cfm.fuse(self.cfm_params, modulated, pyramid.dims, enabled=self.cfm_enabled)
        decoded = lcd.decode(self.lcd_params, fused, pyramid.dims,
                             cue_feats.context, lcm_enabled=self.lcm_enabled)
        scores = lcd.predict_mask(self.lcd_params, decoded.decoded[0])
        box, weights = lcd.predict_box(self.lcd_params, decoded.decoded,
                                       fa_enabled=self.fa_enabled)
        return ModelOutput(box=box, mask_scores=scores, traces=traces,
                           stage_weights=weights, decoded=decoded, dims=pyramid.dims)
