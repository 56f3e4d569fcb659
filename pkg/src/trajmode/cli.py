"""Command-line front end: ingest, train, eval, predict, decompose.

Every command is driven by one JSON config (``--config``) with scalar flag
overrides (``--seed``, ``--parallel``, ``--partitions``); identical inputs,
config, and seed produce byte-identical outputs.  Failures exit nonzero
with a single machine-parseable line ``error:<category>: <message>`` on
stderr.

Partitioned training writes one checkpoint per region plus a manifest
JSON that embeds the region geometry, so evaluation and prediction can
route trajectories without the original partition file.  ``eval`` and
``predict`` accept either a bare checkpoint or such a manifest.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import re
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .config import PipelineConfig, load_config
from .data import Trajectory, read_dataset, write_dataset
from .errors import CheckpointError, ConfigError, DataError, TrajmodeError
from .geolife import ingest_directory
from .metrics import confusion, macro_metrics, report_to_dict
from .models import CHECKPOINT_MAGIC, ModeClassifier, load_checkpoint, save_checkpoint, train
from .partition import (
    Partition,
    PartitionSet,
    UNCLASSIFIED,
    load_partitions,
    predict_partitioned,
    train_partitioned,
)
from .stl import stl_decompose

MANIFEST_NAME = "manifest.json"


def _parse_bool(v: str) -> bool:
    low = v.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {v!r}")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--parallel", type=_parse_bool, metavar="BOOL",
                   help="override parallel partition training")
    p.add_argument("--partitions", help="override the partition geometry file")


def _config_from(args) -> PipelineConfig:
    return load_config(args.config, seed=args.seed, parallel=args.parallel,
                       partition_file=args.partitions)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trajmode",
                                 description="GPS trajectory transportation-mode classification")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a GeoLife directory tree into a dataset file")
    p.add_argument("geolife_dir")
    p.add_argument("--out", required=True, help="output dataset (JSON Lines)")
    _add_common(p)

    p = sub.add_parser("train", help="train on a labeled dataset")
    p.add_argument("dataset")
    p.add_argument("--out-dir", required=True, help="directory for checkpoints and logs")
    _add_common(p)

    p = sub.add_parser("eval", help="score a model against a labeled dataset")
    p.add_argument("dataset")
    p.add_argument("model", help="checkpoint or partition manifest")
    p.add_argument("--report", help="write the metrics report JSON here (default: stdout)")
    _add_common(p)

    p = sub.add_parser("predict", help="label a dataset with a trained model")
    p.add_argument("dataset")
    p.add_argument("model", help="checkpoint or partition manifest")
    p.add_argument("--out", required=True, help="output predictions (JSON Lines)")
    _add_common(p)

    p = sub.add_parser("decompose", help="dump one trajectory's timestamp decomposition as CSV")
    p.add_argument("dataset")
    p.add_argument("--traj-id", required=True)
    p.add_argument("--out", required=True, help="output CSV")
    _add_common(p)
    return ap


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args) -> int:
    cfg = _config_from(args)
    trajs, stats = ingest_directory(args.geolife_dir, label_map=cfg.label_map,
                                    classes=cfg.classes, staypoint=cfg.staypoint)
    if not trajs:
        raise DataError("no labeled segments found; nothing to write")
    write_dataset(trajs, args.out)
    print(f"files parsed:        {stats.files}")
    print(f"points read:         {stats.points_read}")
    print(f"points dropped (ts): {stats.points_dropped_ts}")
    print(f"points unlabeled:    {stats.points_unlabeled}")
    print(f"runs unmapped:       {stats.runs_unmapped}")
    print(f"stay points removed: {stats.points_removed_stay}")
    print(f"short segments out:  {stats.segments_dropped_short}")
    print(f"segments written:    {stats.trajectories}")
    for mode in sorted(stats.per_mode):
        print(f"  {mode}: {stats.per_mode[mode]}")
    return 0


def _sanitize(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name)


def cmd_train(args) -> int:
    cfg = _config_from(args)
    trajs = read_dataset(args.dataset, cfg.classes)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if cfg.partition_file is None:
        model, log = train(trajs, cfg)
        ckpt = out_dir / "model.ckpt"
        save_checkpoint(model, ckpt)
        _write_jsonl(out_dir / "train_log.jsonl", log)
        last = log[-1]
        print(f"trained {len(trajs)} trajectories, {len(log)} epochs")
        print(f"final: loss={last['loss']:.6f} r1={last['r1']} r2={last['r2']} alpha={last['alpha']:.4f}")
        print(f"checkpoint: {ckpt}")
        return 0

    ps = load_partitions(cfg.partition_file)
    results = train_partitioned(trajs, ps, cfg)
    entries = []
    polygons = {p.name: [list(v) for v in p.polygon] for p in ps.partitions}
    for i, r in enumerate(results):
        entry = {
            "name": r.name,
            "polygon": polygons.get(r.name),       # null for the outer region
            "trajectories": r.trajectories,
            "checkpoint": None,
            "skipped_reason": r.skipped_reason,
        }
        if not r.skipped:
            fname = f"{i:02d}_{_sanitize(r.name)}.ckpt"
            save_checkpoint(r.model, out_dir / fname)
            _write_jsonl(out_dir / f"{i:02d}_{_sanitize(r.name)}.log.jsonl", r.log)
            entry["checkpoint"] = fname
        entries.append(entry)
        status = f"skipped ({r.skipped_reason})" if r.skipped else "trained"
        print(f"partition {r.name}: {r.trajectories} trajectories, {status}")
    manifest = out_dir / MANIFEST_NAME
    with open(manifest, "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"partitions": entries}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"manifest: {manifest}")
    return 0


def _write_jsonl(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def _load_model_source(path) -> Tuple[Optional[ModeClassifier], Optional[PartitionSet], Dict[str, Optional[ModeClassifier]]]:
    """A bare checkpoint or a partition manifest.

    Returns (model, None, {}) for a checkpoint and (None, partition_set,
    models_by_region) for a manifest.
    """
    p = Path(path)
    try:
        head = open(p, "rb").read(4)
    except OSError as e:
        raise CheckpointError(f"cannot read model {path}: {e}")
    if head == CHECKPOINT_MAGIC:
        return load_checkpoint(p), None, {}
    try:
        with open(p, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{path} is neither a checkpoint nor a partition manifest")
    if not isinstance(data, dict) or "partitions" not in data:
        raise CheckpointError(f"{path}: manifest must contain a partitions list")
    parts = []
    models: Dict[str, Optional[ModeClassifier]] = {}
    for entry in data["partitions"]:
        name = entry["name"]
        if entry.get("polygon") is not None:
            parts.append(Partition(name=name, polygon=tuple(tuple(v) for v in entry["polygon"])))
        ckpt = entry.get("checkpoint")
        models[name] = load_checkpoint(p.parent / ckpt) if ckpt else None
    ps = PartitionSet(parts)
    trained = [m for m in models.values() if m is not None]
    if not trained:
        raise CheckpointError(f"{path}: manifest references no trained checkpoints")
    first = trained[0].classes
    for m in trained[1:]:
        if m.classes != first:
            raise CheckpointError("manifest checkpoints disagree on the class list")
    return None, ps, models


_COMPAT_KEYS = ("grid", "seq_len", "cnn", "tcn", "stl", "inject_weight", "classes")


def _check_compat(cfg: PipelineConfig, model: ModeClassifier, explicit: bool) -> None:
    """A user-supplied config must agree with the checkpoint on everything
    that shapes the model's inputs; the checkpoint is authoritative otherwise."""
    if not explicit:
        return
    want = cfg.to_dict()
    have = model.pipeline
    for key in _COMPAT_KEYS:
        if key in have and want[key] != have[key]:
            raise ConfigError(
                f"config mismatch with checkpoint on {key!r}: {want[key]!r} != {have[key]!r}"
            )


def _predict_pairs(args) -> Tuple[List[Tuple[str, str]], List[str], List[Trajectory]]:
    """Load the model (checkpoint or manifest), read the dataset with the
    model's own class list, and return sorted (traj_id, mode) pairs.

    The checkpoint is authoritative for preprocessing; a config supplied
    explicitly must agree with it on everything input-shaping.
    """
    model, ps, models = _load_model_source(args.model)
    reference = model if model is not None else next(m for m in models.values() if m is not None)
    if args.config is not None:
        _check_compat(_config_from(args), reference, True)
    trajs = read_dataset(args.dataset, reference.classes)
    ids = [t.traj_id for t in trajs]
    if len(set(ids)) != len(ids):
        raise DataError("dataset contains duplicate trajectory ids")
    if model is not None:
        pairs = sorted(zip(ids, model.predict(trajs))) if trajs else []
    else:
        pairs = predict_partitioned(trajs, ps, models) if trajs else []
    return pairs, reference.classes, trajs


def cmd_predict(args) -> int:
    pairs, _, _ = _predict_pairs(args)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for traj_id, mode in pairs:
            fh.write(json.dumps({"id": traj_id, "mode": mode}, sort_keys=True, separators=(",", ":")))
            fh.write("\n")
    print(f"predicted {len(pairs)} trajectories -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    pairs, classes, trajs = _predict_pairs(args)
    if not trajs:
        raise DataError("cannot evaluate an empty dataset")
    unlabeled = [t.traj_id for t in trajs if t.mode is None]
    if unlabeled:
        raise DataError(f"evaluation needs labels; {len(unlabeled)} trajectories lack one")

    truth = {t.traj_id: t.mode for t in trajs}
    index = {name: i for i, name in enumerate(classes)}
    y_true: List[int] = []
    y_pred: List[int] = []
    n_unclassified = 0
    for traj_id, mode in pairs:
        if mode == UNCLASSIFIED:
            n_unclassified += 1
            continue
        y_true.append(truth[traj_id].index)
        y_pred.append(index[mode])
    if not y_true:
        raise DataError("every trajectory is unclassified (all partitions skipped?)")

    cm = confusion(y_true, y_pred, len(classes))
    report = report_to_dict(macro_metrics(cm), classes)
    per_mode: Dict[str, int] = {}
    for t in trajs:
        per_mode[t.mode.name] = per_mode.get(t.mode.name, 0) + 1
    report["counts"] = {
        "total": len(trajs),
        "classified": len(y_true),
        "unclassified": n_unclassified,
        "per_mode": per_mode,
    }
    blob = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.report:
        with open(args.report, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(blob)
        print(f"acc={report['acc']:.4f} macro_f1={report['macro_f1']:.4f} "
              f"({report['counts']['classified']}/{report['counts']['total']} classified)")
        print(f"report: {args.report}")
    else:
        sys.stdout.write(blob)
    return 0


def cmd_decompose(args) -> int:
    cfg = _config_from(args)
    # labels are irrelevant here; read the geometry regardless of class list
    trajs = read_dataset(args.dataset, classes=None)
    match = [t for t in trajs if t.traj_id == args.traj_id]
    if not match:
        raise DataError(f"no trajectory with id {args.traj_id!r} in {args.dataset}")
    _, _, ts = match[0].arrays()
    dec = stl_decompose(ts, cfg.stl)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["v", "y", "trend", "seasonal", "residual"])
        for v in range(len(ts)):
            writer.writerow([v, repr(float(dec.y[v])), repr(float(dec.trend[v])),
                             repr(float(dec.seasonal[v])), repr(float(dec.residual[v]))])
    print(f"decomposed {len(ts)} points of {args.traj_id} -> {args.out}")
    return 0


# ---------------------------------------------------------------------------


_COMMANDS = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "decompose": cmd_decompose,
}


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except TrajmodeError as e:
        print(f"error:{e.category}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error:io: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
