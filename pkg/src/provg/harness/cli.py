"""Command-line interface.

Subcommands: gen-data, train, eval, ablate, export-attn, decouple.
Precision is selected by the PROVG_PRECISION env var (32 default, 64).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from ..lingparse import decouple_expression
from ..synthdata import SceneSpec, generate, read_dataset, write_dataset, write_spec
from . import ablate as ablate_mod
from .checkpoint import load_model
from .config import RunConfig
from .export import export_attention
from .loop import evaluate, format_report, report_csv_rows, train


def _cmd_gen_data(args) -> int:
    spec = SceneSpec.from_json(json.loads(Path(args.spec).read_text()))
    samples = generate(spec, args.n)
    out = Path(args.out)
    write_dataset(samples, out)
    write_spec(spec, out)
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def _cmd_train(args) -> int:
    config = RunConfig.from_file(Path(args.config))
    result = train(config)
    last = result.history[-1]
    print(f"finished {config.steps} steps; final total loss {last['total']:.4f}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"log: {result.log_path}")
    return 0


def _cmd_eval(args) -> int:
    model, _ = load_model(Path(args.ckpt))
    samples = read_dataset(Path(args.data))
    report = evaluate(model, samples)
    print(format_report(report))
    csv_path = Path(args.ckpt).parent / "eval_metrics.csv"
    rows = report_csv_rows(report)
    with open(csv_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    print(f"metrics: {csv_path}")
    return 0


def _cmd_ablate(args) -> int:
    base = RunConfig.from_file(Path(args.config))
    cells = ablate_mod.load_grid(Path(args.grid))
    seeds = [int(s) for s in args.seeds.split(",") if s]
    if not seeds:
        raise ValueError("at least one seed required")
    train_samples = read_dataset(Path(base.dataset_dir))
    test_samples = read_dataset(Path(args.test_data)) if args.test_data else train_samples
    rows = ablate_mod.run_grid(base, cells, seeds, train_samples, test_samples)
    out = Path(base.out_dir) / "ablation.csv"
    ablate_mod.write_table(rows, out)
    print(ablate_mod.format_table(rows))
    print(f"table: {out}")
    return 0


def _cmd_export_attn(args) -> int:
    model, manifest = load_model(Path(args.ckpt))
    data_dir = Path(args.data) if args.data else Path(manifest["config"]["dataset_dir"])
    samples = {s.sample_id: s for s in read_dataset(data_dir)}
    if args.id not in samples:
        raise KeyError(f"unknown sample id {args.id!r} in {data_dir}")
    out_dir = Path(args.out) if args.out else Path(manifest["config"]["out_dir"]) / "attention"
    written = export_attention(model, samples[args.id], out_dir)
    for path in written:
        print(path)
    return 0


def _cmd_decouple(args) -> int:
    cues = decouple_expression(args.expression)
    print(cues.context.text())
    print(cues.spatial.text())
    print(cues.attribute.text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="provg",
                                     description="progressive visual grounding harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True, help="SceneSpec JSON file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation grid")
    p.add_argument("--config", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--seeds", required=True, help="comma-separated seed list")
    p.add_argument("--test-data", default=None)
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("export-attn", help="write per-stage attention heatmaps")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--id", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_export_attn)

    p = sub.add_parser("decouple", help="print context/spatial/attribute cues")
    p.add_argument("expression")
    p.set_defaults(fn=_cmd_decouple)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, KeyError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
