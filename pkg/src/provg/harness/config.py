"""Run configuration: strict JSON parsing, defaults, validation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

from ..pcm import ModulatorConfig

LR_DECAY_POINTS = (0.7, 0.85)   # fraction of total steps; each decays lr x0.1
LR_DECAY_FACTOR = 0.1


@dataclass(frozen=True)
class RunConfig:
    """Everything a training run depends on; unknown keys are rejected."""

    dataset_dir: str
    out_dir: str
    steps: int
    variant: str = "progressive"
    ordering: str = "S-L-V"
    pcm_enabled: bool = True
    cfm_enabled: bool = True
    lcm_enabled: bool = True
    fa_enabled: bool = True
    lambdas: tuple[float, float, float] = (1.0, 0.5, 0.1)
    lr: float = 3e-4
    weight_decay: float = 0.01
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        # modulator fields validate themselves
        ModulatorConfig(self.variant, self.ordering if self.variant == "progressive" else "S-L-V",
                        self.pcm_enabled)
        if self.steps <= 0:
            raise ValueError(f"steps must be positive, got {self.steps}")
        if self.batch_size <= 0:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be non-negative, got {self.weight_decay}")
        lams = tuple(float(v) for v in self.lambdas)
        if len(lams) != 3 or min(lams) < 0:
            raise ValueError(f"lambdas must be 3 non-negative values, got {self.lambdas}")
        object.__setattr__(self, "lambdas", lams)

    def modulator(self) -> ModulatorConfig:
        return ModulatorConfig(self.variant, self.ordering if self.variant == "progressive"
                               else "S-L-V", self.pcm_enabled)

    def to_json(self) -> dict:
        d = asdict(self)
        d["lambdas"] = list(self.lambdas)
        return d

    @staticmethod
    def from_json(data: dict) -> "RunConfig":
        known = set(RunConfig.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        missing = {"dataset_dir", "out_dir", "steps"} - set(data)
        if missing:
            raise ValueError(f"missing config keys: {sorted(missing)}")
        d = dict(data)
        if "lambdas" in d:
            d["lambdas"] = tuple(d["lambdas"])
        return RunConfig(**d)

    @staticmethod
    def from_file(path: Path) -> "RunConfig":
        return RunConfig.from_json(json.loads(Path(path).read_text()))

    def replaced(self, **overrides) -> "RunConfig":
        d = self.to_json()
        d.update(overrides)
        return RunConfig.from_json(d)


def lr_at(step: int, total_steps: int, base_lr: float) -> float:
    """Piecewise-constant schedule: x0.1 at 70% and again at 85% of steps."""
    lr = base_lr
    for frac in LR_DECAY_POINTS:
        if step >= int(frac * total_steps):
            lr *= LR_DECAY_FACTOR
    return lr
