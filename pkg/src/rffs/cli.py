"""Command-line pipeline: synth, blocks, graphs, train, eval, predict.

Typical run::

    rffs synth --out scene.txt
    rffs blocks --input scene.txt --out-dir blocks
    rffs train --data-dir blocks --epochs 50 --out-checkpoint model.ckpt
    rffs eval --checkpoint model.ckpt --data blocks --report report.json
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError
from .data import (
    SCENE_CLASSES,
    PointCloud,
    PointFileError,
    SceneSpec,
    normalize_block,
    parse_points,
    partition_blocks,
    synth_scene,
    write_points,
    write_predictions,
)
from .graph import GraphError, build_fusion_graphs, build_hierarchy, dump_graphs
from .metrics import confusion, export_confusion, export_report, per_class_metrics
from .model import ArchConfig
from .training import TrainConfig, Trainer, TrainingError, predict, train

log = logging.getLogger("rffs")

CLASSES_FILE = "classes.json"
MANIFEST_FILE = "manifest.json"
CONFIG_SECTIONS = ("arch", "train", "data_dir", "out_checkpoint", "metrics_log")


class CLIError(Exception):
    pass


# -- argument types ----------------------------------------------------------

def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {text}")
    return v


def _int_list(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(t) for t in text.replace(" ", "").split(",") if t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return vals


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.replace(" ", "").split(",") if t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def resolve_seed(flag: int | None, config_value: int | None = None) -> int:
    """Flag, then config file, then ``RFFS_SEED``, then 0."""
    if flag is not None:
        return flag
    if config_value is not None:
        return int(config_value)
    env = os.environ.get("RFFS_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise CLIError(f"RFFS_SEED must be an integer, got {env!r}") from None
    return 0


# -- shared helpers ----------------------------------------------------------

def _write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _classes_beside(path: Path) -> list[str] | None:
    for cand in (path.with_suffix(".classes.json"), path.parent / CLASSES_FILE):
        if cand.is_file():
            return json.loads(cand.read_text())["names"]
    return None


def _block_files(data: Path) -> list[Path]:
    if data.is_file():
        return [data]
    if not data.is_dir():
        raise CLIError(f"no such file or directory: {data}")
    manifest = data / MANIFEST_FILE
    if manifest.is_file():
        return [data / b["file"] for b in json.loads(manifest.read_text())["blocks"]]
    files = sorted(p for p in data.glob("*.txt"))
    if not files:
        raise CLIError(f"no block files in {data}")
    return files


def _load_blocks(data: Path) -> tuple[list[PointCloud], list[str] | None]:
    files = _block_files(data)
    clouds = [parse_points(f) for f in files]
    names = _classes_beside(files[0] if data.is_file() else data / CLASSES_FILE)
    return clouds, names


# -- subcommands -------------------------------------------------------------

def cmd_synth(args) -> int:
    classes = tuple(args.classes.split(",")) if args.classes else SCENE_CLASSES
    spec = SceneSpec(classes=classes, extent=args.extent, density=args.density, seed=resolve_seed(args.seed))
    cloud, cmap = synth_scene(spec)
    out = Path(args.out)
    write_points(cloud, out)
    _write_json(out.with_suffix(".classes.json"), {"names": list(cmap.names)})
    log.info("wrote %d points (%d classes) to %s", len(cloud), cmap.count, out)
    return 0


def cmd_blocks(args) -> int:
    src = Path(args.input)
    cloud = parse_points(src)
    blocks = partition_blocks(cloud, args.block_size, args.min_count)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, b in enumerate(blocks):
        name = f"block_{i:04d}.txt"
        write_points(cloud.subset(b.point_indices), out / name)
        entries.append({"file": name, "origin": b.origin.tolist(), "extent": b.extent.tolist(),
                        "count": int(len(b)), "cells": [list(c) for c in b.cells]})
    names = _classes_beside(src)
    if names is not None:
        _write_json(out / CLASSES_FILE, {"names": names})
    _write_json(out / MANIFEST_FILE, {"source": src.name, "block_size": args.block_size,
                                      "min_count": args.min_count, "total_points": len(cloud),
                                      "blocks": entries})
    log.info("wrote %d blocks to %s", len(blocks), out)
    return 0


def cmd_graphs(args) -> int:
    cloud = parse_points(args.input)
    xyz, _, _ = normalize_block(cloud.xyz)
    hier = build_hierarchy(xyz, cloud.labels, args.k, args.ratios, resolve_seed(args.seed))
    fusion = build_fusion_graphs(hier.xyz[-1], args.k, args.delta, args.dilations)
    dump_graphs(hier, fusion, args.out)
    log.info("levels %s written to %s", hier.sizes, args.out)
    return 0


def _read_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise CLIError("config file must hold a JSON object")
    unknown = set(doc) - set(CONFIG_SECTIONS)
    if unknown:
        raise CLIError(f"unknown config keys: {sorted(unknown)}; allowed: {list(CONFIG_SECTIONS)}")
    return doc


def build_run_config(args, parser) -> tuple[ArchConfig, TrainConfig, dict]:
    """Merge the JSON config file with command-line overrides."""
    doc = _read_config(args.config)
    arch_d = dict(doc.get("arch", {}))
    train_d = dict(doc.get("train", {}))
    for section, cls in ((arch_d, ArchConfig), (train_d, TrainConfig)):
        unknown = set(section) - {f.name for f in fields(cls)}
        if unknown:
            raise CLIError(f"unknown {cls.__name__} keys in config: {sorted(unknown)}")
    if args.no_dense:
        arch_d["dense"] = False
    if args.dilations is not None:
        arch_d["dilations"] = args.dilations
    if args.aggregation is not None:
        arch_d["aggregation"] = args.aggregation
    if args.num_classes is not None:
        arch_d["num_classes"] = args.num_classes
    for key in ("epochs", "batch_size", "lr", "weight_decay", "loss_reduction", "n_target"):
        value = getattr(args, key)
        if value is not None:
            train_d[key] = value
    train_d["seed"] = resolve_seed(args.seed, train_d.get("seed"))
    arch = ArchConfig.from_dict(arch_d)
    levels = arch.depth + 1
    if args.no_mrfa and args.loss_weights is not None:
        parser.error("--no-mrfa and --loss-weights are mutually exclusive")
    if args.no_mrfa:
        train_d["loss_weights"] = (1.0,) + (0.0,) * arch.depth
    elif args.loss_weights is not None:
        if len(args.loss_weights) != levels:
            parser.error(f"--loss-weights expects {levels} values (one per level 0..{levels - 1}), "
                         f"got {len(args.loss_weights)}")
        train_d["loss_weights"] = args.loss_weights
    if "loss_weights" in train_d and len(train_d["loss_weights"]) != levels:
        raise CLIError(f"loss_weights needs {levels} values, got {len(train_d['loss_weights'])}")
    paths = {
        "data_dir": args.data_dir or doc.get("data_dir"),
        "out_checkpoint": args.out_checkpoint or doc.get("out_checkpoint"),
        "metrics_log": args.metrics_log or doc.get("metrics_log"),
    }
    if not paths["data_dir"]:
        parser.error("--data-dir is required (flag or config)")
    if not paths["out_checkpoint"]:
        parser.error("--out-checkpoint is required (flag or config)")
    if not paths["metrics_log"]:
        paths["metrics_log"] = str(paths["out_checkpoint"]) + ".metrics.jsonl"
    return arch, TrainConfig.from_dict(train_d), paths


def cmd_train(args, parser) -> int:
    arch, cfg, paths = build_run_config(args, parser)
    clouds, names = _load_blocks(Path(paths["data_dir"]))
    if names is not None and args.num_classes is None and len(names) != arch.num_classes:
        arch = ArchConfig.from_dict({**arch.to_dict(), "num_classes": len(names)})
    for i, c in enumerate(clouds):
        if c.labels is None:
            raise CLIError(f"labels required: training block {i} is unlabeled")
        if c.labels.max() >= arch.num_classes:
            raise CLIError(f"dataset/architecture mismatch: block {i} has label {c.labels.max()} "
                           f"but the architecture has {arch.num_classes} classes")
    names = names if names is not None else [f"class{i}" for i in range(arch.num_classes)]
    trainer = None
    if args.resume:
        trainer = Trainer.load(paths["out_checkpoint"], arch)
    elif os.path.exists(paths["metrics_log"]):
        os.remove(paths["metrics_log"])
    trainer = train(arch, cfg, clouds, paths["out_checkpoint"], paths["metrics_log"], names, trainer)
    last = trainer.history[-1] if trainer.history else {}
    log.info("trained to epoch %d; final loss %s", trainer.epoch, last.get("total_loss"))
    return 0


def cmd_eval(args) -> int:
    trainer = Trainer.load(args.checkpoint)
    clouds, _ = _load_blocks(Path(args.data))
    truth, pred = [], []
    for i, cloud in enumerate(clouds):
        if cloud.labels is None:
            raise CLIError(f"labels required: block {i} of {args.data} is unlabeled")
        truth.append(cloud.labels)
        pred.append(predict(trainer.model, cloud))
    cfg = trainer.model.cfg
    names = list(trainer.class_names) or [f"class{i}" for i in range(cfg.num_classes)]
    cm = confusion(np.concatenate(truth), np.concatenate(pred), cfg.num_classes)
    report = per_class_metrics(cm, names)
    export_report(report, args.report, "json")
    if args.csv:
        export_report(report, args.csv, "csv")
    export_confusion(cm, names, args.confusion or str(Path(args.report).with_suffix(".confusion.csv")))
    log.info("OA %.4f mF1 %.4f mIoU %.4f", report.oa, report.mf1, report.miou)
    return 0


def cmd_predict(args) -> int:
    trainer = Trainer.load(args.checkpoint)
    cloud = parse_points(args.input)
    write_predictions(cloud, predict(trainer.model, cloud), args.out)
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rffs", description="Point-cloud classification pipeline.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a labeled synthetic scene")
    s.add_argument("--out", required=True)
    s.add_argument("--classes", help=f"comma-separated subset of {','.join(SCENE_CLASSES)}")
    s.add_argument("--extent", type=_positive_float, default=30.0)
    s.add_argument("--density", type=_positive_float, default=SceneSpec.density)
    s.add_argument("--seed", type=int)

    b = sub.add_parser("blocks", help="partition a scene into horizontal blocks")
    b.add_argument("--input", required=True)
    b.add_argument("--block-size", type=_positive_float, default=30.0)
    b.add_argument("--min-count", type=_positive_int, default=64)
    b.add_argument("--out-dir", required=True)

    g = sub.add_parser("graphs", help="dump the sampling hierarchy and fusion graphs of a block")
    g.add_argument("--input", required=True)
    g.add_argument("--k", type=_positive_int, default=32)
    g.add_argument("--delta", type=_positive_int, default=4)
    g.add_argument("--dilations", type=_int_list, default=(1, 2, 4, 8))
    g.add_argument("--ratios", type=_int_list, default=(4, 4, 2))
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train a model on a directory of labeled blocks")
    t.add_argument("--config", help="JSON file with arch/train sections and paths")
    t.add_argument("--data-dir")
    t.add_argument("--out-checkpoint")
    t.add_argument("--metrics-log")
    t.add_argument("--resume", action="store_true", help="continue from --out-checkpoint")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=_positive_int)
    t.add_argument("--lr", type=_positive_float)
    t.add_argument("--weight-decay", type=float)
    t.add_argument("--n-target", type=_positive_int)
    t.add_argument("--num-classes", type=_positive_int)
    t.add_argument("--loss-reduction", choices=("mean", "sum"))
    t.add_argument("--no-dense", action="store_true", help="disable dense connections in the fusion cascades")
    t.add_argument("--no-mrfa", action="store_true", help="supervise only the full-resolution head")
    t.add_argument("--dilations", type=_int_list)
    t.add_argument("--loss-weights", type=_float_list, help="one weight per level, full resolution first")
    t.add_argument("--aggregation", choices=("concat", "add"))

    e = sub.add_parser("eval", help="evaluate a checkpoint on labeled blocks")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="block file or directory")
    e.add_argument("--report", required=True, help="JSON report path")
    e.add_argument("--csv", help="also write the report as CSV")
    e.add_argument("--confusion", help="confusion matrix CSV (default: next to the report)")

    r = sub.add_parser("predict", help="write per-point predictions for one block")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--input", required=True)
    r.add_argument("--out", required=True)
    return p


RUNTIME_ERRORS = (CLIError, PointFileError, GraphError, CheckpointError, TrainingError,
                  FileNotFoundError, ValueError, KeyError, OSError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    handlers = {"synth": cmd_synth, "blocks": cmd_blocks, "graphs": cmd_graphs, "eval": cmd_eval,
                "predict": cmd_predict}
    try:
        if args.command == "train":
            return cmd_train(args, parser)
        return handlers[args.command](args)
    except RUNTIME_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"rffs {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
