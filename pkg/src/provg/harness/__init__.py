"""Training/evaluation harness: config parsing, deterministic training loop,
checkpoints, metrics, ablation grids, attention-map export and the CLI."""

from .config import RunConfig
from .checkpoint import load_checkpoint, load_model, save_checkpoint
from .loop import TrainingDivergedError, TrainResult, evaluate, evaluate_predictions, train

__all__ = [
    "RunConfig", "TrainResult", "TrainingDivergedError",
    "train", "evaluate", "evaluate_predictions",
    "save_checkpoint", "load_checkpoint", "load_model",
]
