"""Ablation grid runner: trains each (cell, seed) pair on shared data from a
shared per-seed initialisation and reports medians over seeds."""

from __future__ import annotations

import csv
import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path

from ..synthdata import Sample
from .config import RunConfig
from .loop import evaluate, train

TABLE_COLUMNS = ["cell", "rec_pr@0.5", "rec_oiou", "rec_miou",
                 "res_pr@0.5", "res_oiou", "res_miou", "seeds", "failures"]

CELL_OVERRIDE_KEYS = {"variant", "ordering", "pcm_enabled", "cfm_enabled",
                      "lcm_enabled", "fa_enabled", "lambdas"}


@dataclass
class AblationCell:
    name: str
    overrides: dict

    @staticmethod
    def from_json(data: dict) -> "AblationCell":
        d = dict(data)
        name = d.pop("name", None)
        unknown = set(d) - CELL_OVERRIDE_KEYS
        if unknown:
            raise ValueError(f"unknown grid cell keys: {sorted(unknown)}")
        if name is None:
            name = ",".join(f"{k}={v}" for k, v in sorted(d.items()))
        return AblationCell(name, d)


@dataclass
class AblationRow:
    cell: str
    medians: dict[str, float]
    per_seed: dict[int, dict[str, float]] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)


def load_grid(path: Path) -> list[AblationCell]:
    data = json.loads(Path(path).read_text())
    cells = data.get("cells")
    if not cells:
        raise ValueError(f"grid file {path} has no 'cells'")
    return [AblationCell.from_json(c) for c in cells]


def _cell_metrics(report) -> dict[str, float]:
    return {
        "rec_pr@0.5": report.rec.precision_at[0.5],
        "rec_oiou": report.rec.oiou,
        "rec_miou": report.rec.miou,
        "res_pr@0.5": report.res.precision_at[0.5],
        "res_oiou": report.res.oiou,
        "res_miou": report.res.miou,
    }


def run_grid(base: RunConfig, cells: list[AblationCell], seeds: list[int],
             train_samples: list[Sample] | None = None,
             test_samples: list[Sample] | None = None) -> list[AblationRow]:
    """Train/evaluate each cell under each seed; any cell failure is recorded
    and the run continues."""
    rows = [AblationRow(cell.name, {}) for cell in cells]
    for seed in seeds:
        for cell, row in zip(cells, rows):
            try:
                config = base.replaced(seed=seed, **cell.overrides)
                result = train(config, samples=train_samples, write_outputs=False)
                report = evaluate(result.model, test_samples if test_samples is not None
                                  else _load_test(base))
                row.per_seed[seed] = _cell_metrics(report)
            except Exception as e:          # record and continue with the grid
                row.failures.append(f"seed {seed}: {type(e).__name__}: {e}")
    for row in rows:
        if row.per_seed:
            keys = next(iter(row.per_seed.values()))
            row.medians = {k: statistics.median(m[k] for m in row.per_seed.values())
                           for k in keys}
    return rows


def _load_test(base: RunConfig):
    from ..synthdata import read_dataset
    return read_dataset(Path(base.dataset_dir))


def write_table(rows: list[AblationRow], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=TABLE_COLUMNS)
        writer.writeheader()
        for row in rows:
            record = {"cell": row.cell, "seeds": len(row.per_seed),
                      "failures": len(row.failures)}
            record.update({k: f"{v:.4f}" for k, v in row.medians.items()})
            writer.writerow(record)


def format_table(rows: list[AblationRow]) -> str:
    lines = ["  ".join(f"{c:>12}" for c in TABLE_COLUMNS)]
    for row in rows:
        cells = [f"{row.cell:>12}"]
        cells += [f"{row.medians.get(k, float('nan')):12.4f}" for k in TABLE_COLUMNS[1:7]]
        cells += [f"{len(row.per_seed):12d}", f"{len(row.failures):12d}"]
        lines.append("  ".join(cells))
    return "\n".join(lines)
