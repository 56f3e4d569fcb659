"""Pipeline configuration: defaults, strict JSON loading, flag overrides.

One config object drives every stage — ingestion, feature building, both
branches, training, partitioning — so a single JSON file plus a seed fully
reproduces a run.  Precedence: command-line flag > config file > default.
Unknown keys are rejected at every nesting level rather than ignored;
a silently dropped typo ("epohcs") is worse than an error.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Dict, Mapping, Optional, Tuple

from .data import DEFAULT_CLASSES, DEFAULT_LABEL_MAP
from .errors import ConfigError
from .geolife import StayPointConfig
from .mapping import GridConfig
from .models import CnnConfig, TcnConfig
from .stl import StlConfig


def _int(v, where: str, minimum: Optional[int] = None) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}: expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{where}: must be >= {minimum}, got {v}")
    return v


def _num(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {v!r}")
    return float(v)


def _bool(v, where: str) -> bool:
    if not isinstance(v, bool):
        raise ConfigError(f"{where}: expected true/false, got {v!r}")
    return v


def _check_keys(d: Mapping, allowed, where: str) -> None:
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(map(repr, unknown))}")


@dataclass(frozen=True)
class PipelineConfig:
    grid: GridConfig = GridConfig()
    seq_len: int = 300
    cnn_blocks: int = 3
    cnn_channels: Tuple[int, ...] = (16, 32, 64)
    tcn_hidden_units: int = 25
    tcn_kernel: int = 3
    tcn_dilation_base: int = 2
    tcn_levels: int = 4
    tcn_dropout: float = 0.05
    lr: float = 0.002
    batch_size: int = 64
    epochs: int = 20
    stl: StlConfig = StlConfig()
    inject_weight: float = 1.0
    staypoint: StayPointConfig = StayPointConfig()
    split: float = 0.8
    seed: int = 0
    partition_file: Optional[str] = None
    parallel: bool = False
    classes: Tuple[str, ...] = DEFAULT_CLASSES
    label_map: Dict[str, str] = field(default_factory=lambda: dict(DEFAULT_LABEL_MAP))

    def __post_init__(self):
        if self.seq_len < 1:
            raise ConfigError(f"seq_len must be positive, got {self.seq_len}")
        if not 0.0 < self.split < 1.0:
            raise ConfigError(f"split must be in (0, 1), got {self.split}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.lr <= 0 or not self.lr == self.lr:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be positive")
        if self.inject_weight < 0 or self.inject_weight != self.inject_weight:
            raise ConfigError(f"inject_weight must be finite and >= 0, got {self.inject_weight}")
        if not self.classes:
            raise ConfigError("classes must not be empty")
        if len(set(self.classes)) != len(self.classes):
            raise ConfigError("classes must be unique")
        for raw, mapped in self.label_map.items():
            if mapped not in self.classes:
                raise ConfigError(f"label_map maps {raw!r} to unknown class {mapped!r}")
        if self.partition_file is not None and not isinstance(self.partition_file, str):
            raise ConfigError("partition_file must be a path or null")
        # branch constraints are owned by the branch configs; construct to validate
        CnnConfig(cells_x=self.grid.cells_x, cells_y=self.grid.cells_y,
                  blocks=self.cnn_blocks, channels=self.cnn_channels, classes=len(self.classes))
        TcnConfig(hidden_units=self.tcn_hidden_units, kernel=self.tcn_kernel,
                  dilation_base=self.tcn_dilation_base, levels=self.tcn_levels,
                  dropout=self.tcn_dropout, seq_len=self.seq_len, classes=len(self.classes))

    def to_dict(self) -> dict:
        """Nested JSON-ready view; the exact shape accepted by from_dict."""
        return {
            "grid": {"cells_x": self.grid.cells_x, "cells_y": self.grid.cells_y},
            "seq_len": self.seq_len,
            "cnn": {"blocks": self.cnn_blocks, "channels": list(self.cnn_channels)},
            "tcn": {
                "hidden_units": self.tcn_hidden_units,
                "kernel": self.tcn_kernel,
                "dilation_base": self.tcn_dilation_base,
                "levels": self.tcn_levels,
                "dropout": self.tcn_dropout,
            },
            "optimizer": {"lr": self.lr, "batch_size": self.batch_size, "epochs": self.epochs},
            "stl": {
                "period": self.stl.period,
                "inner_iterations": self.stl.inner_iterations,
                "seasonal_loess_span": self.stl.seasonal_loess_span,
                "trend_loess_span": self.stl.trend_loess_span,
                "lowpass_loess_span": self.stl.lowpass_loess_span,
            },
            "inject_weight": self.inject_weight,
            "staypoint": {
                "dist_threshold_m": self.staypoint.dist_threshold_m,
                "time_threshold_s": self.staypoint.time_threshold_s,
            },
            "split": self.split,
            "seed": self.seed,
            "partition_file": self.partition_file,
            "parallel": self.parallel,
            "classes": list(self.classes),
            "label_map": dict(self.label_map),
        }


_TOP_KEYS = (
    "grid", "seq_len", "cnn", "tcn", "optimizer", "stl", "inject_weight",
    "staypoint", "split", "seed", "partition_file", "parallel", "classes", "label_map",
)


def from_dict(data: Mapping) -> PipelineConfig:
    """Build a config from a (possibly partial) nested dict; strict keys."""
    if not isinstance(data, Mapping):
        raise ConfigError("config root must be a JSON object")
    _check_keys(data, _TOP_KEYS, "config")
    kw: dict = {}

    if "grid" in data:
        g = data["grid"]
        _check_keys(g, ("cells_x", "cells_y"), "config.grid")
        kw["grid"] = GridConfig(
            cells_x=_int(g.get("cells_x", 40), "grid.cells_x", 1),
            cells_y=_int(g.get("cells_y", 40), "grid.cells_y", 1),
        )
    if "seq_len" in data:
        kw["seq_len"] = _int(data["seq_len"], "seq_len", 1)
    if "cnn" in data:
        c = data["cnn"]
        _check_keys(c, ("blocks", "channels"), "config.cnn")
        if "blocks" in c:
            kw["cnn_blocks"] = _int(c["blocks"], "cnn.blocks", 1)
        if "channels" in c:
            ch = c["channels"]
            if not isinstance(ch, list) or not ch:
                raise ConfigError("cnn.channels must be a non-empty list")
            kw["cnn_channels"] = tuple(_int(v, "cnn.channels[]", 1) for v in ch)
    if "tcn" in data:
        t = data["tcn"]
        _check_keys(t, ("hidden_units", "kernel", "dilation_base", "levels", "dropout"), "config.tcn")
        if "hidden_units" in t:
            kw["tcn_hidden_units"] = _int(t["hidden_units"], "tcn.hidden_units", 1)
        if "kernel" in t:
            kw["tcn_kernel"] = _int(t["kernel"], "tcn.kernel", 1)
        if "dilation_base" in t:
            kw["tcn_dilation_base"] = _int(t["dilation_base"], "tcn.dilation_base", 1)
        if "levels" in t:
            kw["tcn_levels"] = _int(t["levels"], "tcn.levels", 1)
        if "dropout" in t:
            kw["tcn_dropout"] = _num(t["dropout"], "tcn.dropout")
    if "optimizer" in data:
        o = data["optimizer"]
        _check_keys(o, ("lr", "batch_size", "epochs"), "config.optimizer")
        if "lr" in o:
            kw["lr"] = _num(o["lr"], "optimizer.lr")
        if "batch_size" in o:
            kw["batch_size"] = _int(o["batch_size"], "optimizer.batch_size", 1)
        if "epochs" in o:
            kw["epochs"] = _int(o["epochs"], "optimizer.epochs", 1)
    if "stl" in data:
        s = data["stl"]
        _check_keys(
            s,
            ("period", "inner_iterations", "seasonal_loess_span", "trend_loess_span", "lowpass_loess_span"),
            "config.stl",
        )
        kw["stl"] = StlConfig(
            period=_int(s.get("period", 24), "stl.period", 2),
            inner_iterations=_int(s.get("inner_iterations", 2), "stl.inner_iterations", 1),
            seasonal_loess_span=_int(s.get("seasonal_loess_span", 7), "stl.seasonal_loess_span", 3),
            trend_loess_span=(
                _int(s["trend_loess_span"], "stl.trend_loess_span", 3)
                if s.get("trend_loess_span") is not None else None
            ),
            lowpass_loess_span=(
                _int(s["lowpass_loess_span"], "stl.lowpass_loess_span", 3)
                if s.get("lowpass_loess_span") is not None else None
            ),
        )
    if "inject_weight" in data:
        kw["inject_weight"] = _num(data["inject_weight"], "inject_weight")
    if "staypoint" in data:
        sp = data["staypoint"]
        _check_keys(sp, ("dist_threshold_m", "time_threshold_s"), "config.staypoint")
        kw["staypoint"] = StayPointConfig(
            dist_threshold_m=_num(sp.get("dist_threshold_m", 200.0), "staypoint.dist_threshold_m"),
            time_threshold_s=_num(sp.get("time_threshold_s", 1200.0), "staypoint.time_threshold_s"),
        )
    if "split" in data:
        kw["split"] = _num(data["split"], "split")
    if "seed" in data:
        kw["seed"] = _int(data["seed"], "seed", 0)
    if "partition_file" in data:
        pf = data["partition_file"]
        if pf is not None and not isinstance(pf, str):
            raise ConfigError("partition_file must be a path or null")
        kw["partition_file"] = pf
    if "parallel" in data:
        kw["parallel"] = _bool(data["parallel"], "parallel")
    if "classes" in data:
        cl = data["classes"]
        if not isinstance(cl, list) or not all(isinstance(v, str) for v in cl):
            raise ConfigError("classes must be a list of strings")
        kw["classes"] = tuple(cl)
    if "label_map" in data:
        lm = data["label_map"]
        if not isinstance(lm, Mapping) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in lm.items()
        ):
            raise ConfigError("label_map must map strings to strings")
        kw["label_map"] = dict(lm)
    return PipelineConfig(**kw)


def load_config(
    path=None,
    seed: Optional[int] = None,
    parallel: Optional[bool] = None,
    partition_file: Optional[str] = None,
) -> PipelineConfig:
    """Config file plus scalar flag overrides (flag > file > default)."""
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}")
        cfg = from_dict(data)
    else:
        cfg = PipelineConfig()
    overrides: dict = {}
    if seed is not None:
        overrides["seed"] = _int(seed, "--seed", 0)
    if parallel is not None:
        overrides["parallel"] = _bool(parallel, "--parallel")
    if partition_file is not None:
        overrides["partition_file"] = partition_file
    return replace(cfg, **overrides) if overrides else cfg
