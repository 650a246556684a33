"""Single-file checkpoints: a JSON manifest line followed by one binary blob
of little-endian float32 values concatenated in manifest order."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..model import GroundingModel
from .config import RunConfig

FORMAT_VERSION = 1


def save_checkpoint(model: GroundingModel, config: RunConfig, step: int,
                    path: Path) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, tensor in model.parameters().items():
        arr = np.ascontiguousarray(tensor.data, dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.size
    manifest = {
        "format_version": FORMAT_VERSION,
        "step": step,
        "config": config.to_json(),
        "params": entries,
    }
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":"))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header.encode("utf-8"))
        f.write(b"\n")
        f.write(b"".join(blobs))


def load_checkpoint(path: Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Returns (manifest, arrays by name); validates sizes and version."""
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    manifest = json.loads(raw[:nl].decode("utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version: {manifest.get('format_version')}")
    blob = np.frombuffer(raw[nl + 1:], dtype="<f4")
    total = sum(int(np.prod(e["shape"])) for e in manifest["params"])
    if blob.size != total:
        raise ValueError(f"checkpoint blob holds {blob.size} floats, manifest expects {total}")
    arrays = {}
    for e in manifest["params"]:
        size = int(np.prod(e["shape"]))
        arrays[e["name"]] = blob[e["offset"]:e["offset"] + size].reshape(e["shape"])
    return manifest, arrays


def load_model(path: Path) -> tuple[GroundingModel, dict]:
    """Rebuild the model named by a checkpoint's config snapshot."""
    manifest, arrays = load_checkpoint(path)
    config = RunConfig.from_json(manifest["config"])
    model = GroundingModel(config.modulator(), cfm_enabled=config.cfm_enabled,
                           lcm_enabled=config.lcm_enabled, fa_enabled=config.fa_enabled,
                           seed=config.seed)
    model.load_arrays(arrays)
    return model, manifest
