"""Command-line entry point: train, ablate, and export subcommands.

Exit codes: 0 success, 2 configuration/input problems, 3 training
divergence. All outputs land under --out; summary.json is byte-identical
across reruns of the same config and seed (timing goes to timing.json).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings

import numpy as np

from .backbone import load_checkpoint, save_checkpoint
from .config import SCHEMA, load_config, resolve_data_dir
from .data import load_dataset, read_structures, write_structures
from .errors import CheckpointError, ConfigError, DataFormatError, DivergenceError
from .layers import load_state
from .training import (
    BackboneNet,
    RunConfig,
    RunResult,
    VARIANTS,
    build_model,
    config_dict,
    dense_to_edges,
    prepare_graphs,
    refine_dataset_structures,
    run_ablation,
    run_regime,
    variant_settings,
)

TRACE_HEADER = "fold,epoch,train_loss,val_loss,motif_loss"


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_traces(path: str, result: RunResult) -> None:
    with open(path, "w") as fh:
        fh.write(TRACE_HEADER + "\n")
        for fold, epoch, train, val, motif in result.trace_rows():
            fh.write(f"{fold},{epoch},{train!r},{val!r},{motif!r}\n")


def _write_effective_config(path: str, cfg: RunConfig) -> None:
    """Re-feedable TOML echo of the effective configuration."""
    values = config_dict(cfg)
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (field, typ) in keys.items():
            val = values[field]
            if field == "update_every" and val is None:
                val = 0
            if isinstance(val, str):
                lines.append(f'{key} = "{val}"')
            elif isinstance(val, float):
                lines.append(f"{key} = {val!r}")
            else:
                lines.append(f"{key} = {val}")
        lines.append("")
    with open(path, "w") as fh:
        fh.write("\n".join(lines))


def _emit_run(out_dir: str, cfg: RunConfig, result: RunResult) -> None:
    os.makedirs(out_dir, exist_ok=True)
    _write_json(os.path.join(out_dir, "summary.json"), result.summary_dict())
    _write_json(os.path.join(out_dir, "timing.json"),
                {"wall_clock_sec": result.wall_clock_sec})
    _write_traces(os.path.join(out_dir, "traces.csv"), result)
    _write_effective_config(os.path.join(out_dir, "effective_config.toml"), cfg)
    ckpt_dir = os.path.join(out_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    for i, state in enumerate(result.states):
        save_checkpoint(os.path.join(ckpt_dir, f"fold_{i}.npz"), state)


def _default_out(config_ref: str, cfg: RunConfig) -> str:
    stem = os.path.splitext(os.path.basename(config_ref))[0]
    return os.path.join("runs", f"{stem}-{cfg.regime}-seed{cfg.seed}")


def _load_inputs(args) -> tuple[RunConfig, "Dataset"]:
    overrides = {
        "dataset": args.dataset,
        "backbone": args.backbone,
        "regime": getattr(args, "regime", None),
        "seed": args.seed,
        "jobs": args.jobs,
        "data_dir": args.data_dir,
        "variant": getattr(args, "variant", None),
    }
    cfg = load_config(args.config, overrides)
    dataset = load_dataset(resolve_data_dir(cfg), cfg.dataset, cfg.degree_cap)
    return cfg, dataset


def cmd_train(args) -> int:
    cfg, dataset = _load_inputs(args)
    structures = read_structures(args.structures) if args.structures else None
    if structures is not None and cfg.regime != "pre":
        raise ConfigError("--structures is only meaningful with the pre regime")
    result = run_regime(cfg, dataset, structures)
    out_dir = args.out or _default_out(args.config, cfg)
    _emit_run(out_dir, cfg, result)
    print(f"{cfg.dataset} [{cfg.regime}/{cfg.variant}] "
          f"mean accuracy {100 * result.mean:.2f} ± {100 * result.std:.2f} "
          f"over {len(result.fold_accuracies)} folds -> {out_dir}")
    return 0


def cmd_ablate(args) -> int:
    cfg, dataset = _load_inputs(args)
    requested = [v.strip() for v in args.variants.split(",") if v.strip()]
    if not requested:
        raise ConfigError("no variants given")
    variants = []
    for v in requested:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant: {v}")
        if v in variants:
            warnings.warn(f"duplicate variant {v} ignored")
            continue
        variants.append(v)
    results = run_ablation(cfg, dataset, variants)
    out_dir = args.out or _default_out(args.config, cfg)
    os.makedirs(out_dir, exist_ok=True)
    rows = ["variant,mean_accuracy,std_accuracy," +
            ",".join(f"fold_{i}" for i in range(10))]
    for v in variants:
        res = results[v]
        _emit_run(os.path.join(out_dir, v.replace("+", "_")), cfg, res)
        accs = ",".join(repr(a) for a in res.fold_accuracies)
        rows.append(f"{v},{res.mean!r},{res.std!r},{accs}")
        print(f"{v:12s} mean accuracy {100 * res.mean:.2f} ± {100 * res.std:.2f}")
    with open(os.path.join(out_dir, "comparison.csv"), "w") as fh:
        fh.write("\n".join(rows) + "\n")
    return 0


def cmd_export(args) -> int:
    cfg, dataset = _load_inputs(args)
    ckpt_path = args.checkpoint
    if os.path.isdir(ckpt_path):
        ckpt_path = os.path.join(ckpt_path, "checkpoints", "fold_0.npz")
        if not os.path.isfile(ckpt_path):
            ckpt_path = os.path.join(args.checkpoint, "fold_0.npz")
    if not os.path.isfile(ckpt_path):
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    state = load_checkpoint(ckpt_path)

    cfg = variant_settings(cfg)
    whole = cfg.variant in ("gsl", "gsl+motif")
    model = build_model(cfg, dataset.feature_dim, dataset.num_classes,
                        np.random.default_rng(cfg.seed))
    try:
        load_state(model.parts(), state)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint does not match config: {exc}") from exc

    prepared = prepare_graphs(dataset, cfg, whole)
    if isinstance(model, BackboneNet):
        structures = {gid: dense_to_edges(pg.adj) for gid, pg in enumerate(prepared)}
    else:
        structures = refine_dataset_structures(model, prepared)
    write_structures(args.out, structures)
    print(f"wrote {len(structures)} refined structures -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mosgsl",
        description="Motif-driven subgraph structure learning for graph classification")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="TOML config file or packaged name")
        p.add_argument("--dataset", help="override data.dataset")
        p.add_argument("--backbone", help="override model.backbone")
        p.add_argument("--seed", type=int, help="override train.seed")
        p.add_argument("--jobs", type=int, help="fold-level process parallelism")
        p.add_argument("--data-dir", dest="data_dir",
                       help="dataset root (default: $MOSGSL_DATA_DIR or ./data)")

    train = sub.add_parser("train", help="run the configured regime over 10 folds")
    common(train)
    train.add_argument("--regime", choices=("co", "pre", "test"))
    train.add_argument("--variant", choices=VARIANTS)
    train.add_argument("--structures", help="pre regime: use these exported structures")
    train.add_argument("--out", help="output directory")
    train.set_defaults(fn=cmd_train)

    ablate = sub.add_parser("ablate", help="compare ablation variants")
    common(ablate)
    ablate.add_argument("--variants", required=True,
                        help="comma-separated subset of " + ",".join(VARIANTS))
    ablate.add_argument("--out", help="output directory")
    ablate.set_defaults(fn=cmd_ablate)

    export = sub.add_parser("export", help="write refined structures from a checkpoint")
    common(export)
    export.add_argument("--checkpoint", required=True, help="run directory or fold .npz")
    export.add_argument("--out", required=True, help="structure output directory")
    export.set_defaults(fn=cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, CheckpointError, DataFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
