"""Core trajectory data model and the JSON Lines dataset format.

A dataset file holds one trajectory per LF-terminated line:

    {"id": "<opaque>", "mode": "<class name>" | null, "points": [[lat, lon, ts], ...]}

Writing is byte-deterministic for a given trajectory list.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .errors import DataError, ParseError

# Canonical class set: index is the model output index.
DEFAULT_CLASSES = ("walk", "bike", "bus", "subway", "private_car", "taxi", "train")

# Raw GeoLife mode annotation -> canonical class name.  Modes absent from
# this table (boat, run, airplane, motorcycle, ...) are dropped at ingest.
DEFAULT_LABEL_MAP = {
    "walk": "walk",
    "bike": "bike",
    "bus": "bus",
    "subway": "subway",
    "car": "private_car",
    "taxi": "taxi",
    "train": "train",
}


@dataclass(frozen=True)
class ClassLabel:
    name: str
    index: int


def class_labels(classes: Sequence[str] = DEFAULT_CLASSES) -> List[ClassLabel]:
    return [ClassLabel(name, i) for i, name in enumerate(classes)]


def label_for(name: str, classes: Sequence[str] = DEFAULT_CLASSES) -> ClassLabel:
    try:
        return ClassLabel(name, list(classes).index(name))
    except ValueError:
        raise DataError(f"unknown class name {name!r}")


@dataclass(frozen=True)
class GpsPoint:
    id: int          # position within its trajectory, 0-based
    lat: float       # degrees, [-90, 90]
    lon: float       # degrees, [-180, 180]
    ts: float        # seconds since the Unix epoch (UTC)


@dataclass
class Trajectory:
    traj_id: str
    points: List[GpsPoint]
    mode: Optional[ClassLabel] = None

    def __len__(self) -> int:
        return len(self.points)

    def validate(self) -> "Trajectory":
        """Check the boundary invariants; raise DataError on violation."""
        if not self.points:
            raise DataError(f"trajectory {self.traj_id!r} is empty")
        last_ts = None
        for i, p in enumerate(self.points):
            if p.id != i:
                raise DataError(f"trajectory {self.traj_id!r}: point id {p.id} at position {i}")
            if not (-90.0 <= p.lat <= 90.0) or not (-180.0 <= p.lon <= 180.0):
                raise DataError(
                    f"trajectory {self.traj_id!r}: coordinate out of range at point {i}"
                )
            if not (np.isfinite(p.lat) and np.isfinite(p.lon) and np.isfinite(p.ts)):
                raise DataError(f"trajectory {self.traj_id!r}: non-finite value at point {i}")
            if last_ts is not None and p.ts <= last_ts:
                raise DataError(
                    f"trajectory {self.traj_id!r}: timestamps not strictly increasing at point {i}"
                )
            last_ts = p.ts
        return self

    def arrays(self):
        """(lat, lon, ts) as float64 arrays; convenience for numeric code."""
        lat = np.array([p.lat for p in self.points], dtype=np.float64)
        lon = np.array([p.lon for p in self.points], dtype=np.float64)
        ts = np.array([p.ts for p in self.points], dtype=np.float64)
        return lat, lon, ts


def from_arrays(traj_id: str, lat, lon, ts, mode: Optional[ClassLabel] = None) -> Trajectory:
    pts = [GpsPoint(i, float(a), float(o), float(t)) for i, (a, o, t) in enumerate(zip(lat, lon, ts))]
    return Trajectory(traj_id, pts, mode)


@dataclass
class IngestStats:
    """Counters accumulated while turning raw files into a labeled dataset."""

    files: int = 0
    points_read: int = 0
    points_dropped_ts: int = 0      # duplicate / non-increasing timestamps
    points_unlabeled: int = 0       # outside every label interval
    runs_unmapped: int = 0          # labeled runs whose mode is not in the label map
    points_removed_stay: int = 0    # removed by stay-point segmentation
    segments_dropped_short: int = 0  # segments under 2 points after cutting
    trajectories: int = 0
    per_mode: dict = field(default_factory=dict)

    def count_mode(self, name: str) -> None:
        self.per_mode[name] = self.per_mode.get(name, 0) + 1


def write_dataset(trajectories: Sequence[Trajectory], path) -> None:
    """Serialize trajectories as JSON Lines.  Byte-deterministic."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for t in trajectories:
            rec = {
                "id": t.traj_id,
                "mode": t.mode.name if t.mode is not None else None,
                "points": [[p.lat, p.lon, p.ts] for p in t.points],
            }
            fh.write(json.dumps(rec, separators=(",", ":")))
            fh.write("\n")


def read_dataset(path, classes: Optional[Sequence[str]] = DEFAULT_CLASSES) -> List[Trajectory]:
    """Parse a JSON Lines dataset, validating every trajectory.

    Unknown mode names, bad coordinates and non-increasing timestamps are
    reported with the offending line number.  An empty file is an empty
    dataset, not an error.  ``classes=None`` skips mode resolution entirely
    (every trajectory comes back unlabeled) for consumers that only need
    the geometry.
    """
    path = Path(path)
    out: List[Trajectory] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"bad JSON: {e.msg}", line=lineno)
            if not isinstance(rec, dict) or set(rec) != {"id", "mode", "points"}:
                raise ParseError("expected keys id, mode, points", line=lineno)
            if not isinstance(rec["id"], str):
                raise ParseError("id must be a string", line=lineno)
            mode = None
            if rec["mode"] is not None:
                if not isinstance(rec["mode"], str):
                    raise ParseError("mode must be a string or null", line=lineno)
                if classes is not None:
                    if rec["mode"] not in classes:
                        raise ParseError(f"unknown mode {rec['mode']!r}", line=lineno)
                    mode = label_for(rec["mode"], classes)
            pts = rec["points"]
            if not isinstance(pts, list) or not pts:
                raise ParseError("points must be a non-empty list", line=lineno)
            points = []
            for i, item in enumerate(pts):
                if not isinstance(item, list) or len(item) != 3:
                    raise ParseError(f"point {i} must be [lat, lon, ts]", line=lineno)
                lat, lon, ts = (float(v) for v in item)
                points.append(GpsPoint(i, lat, lon, ts))
            traj = Trajectory(rec["id"], points, mode)
            try:
                traj.validate()
            except DataError as e:
                raise ParseError(str(e), line=lineno)
            out.append(traj)
    return out
