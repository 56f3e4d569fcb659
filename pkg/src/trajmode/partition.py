"""Spatial partitioning: assign trajectories to named regions, train one
model per region (optionally concurrently), and fuse the results.

A partition set is an ordered list of named polygons plus an implicit
trailing "outer" region that catches everything uncontained.  A point
belongs to the first polygon containing it (boundaries count as inside);
a trajectory goes to the region holding most of its points, ties broken
by declaration order with "outer" last.

Each region trains independently with its own derived seed
(``seed XOR low-64-bits(sha256(name))``), so results never depend on
whether regions ran serially or in parallel — the parallel path must be
(and is, by construction: no shared mutable state) bitwise identical to
the serial one.
"""
from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from math import isfinite
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .data import GpsPoint, Trajectory
from .errors import ConfigError, DataError, TrajmodeError
from .models import ModeClassifier, train

log = logging.getLogger("trajmode.partition")

OUTER_NAME = "outer"
UNCLASSIFIED = "unclassified"


@dataclass(frozen=True)
class Partition:
    """A named simple polygon; (lat, lon) vertices, implicitly closed."""

    name: str
    polygon: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        if not self.name:
            raise ConfigError("partition name must be non-empty")
        if len(self.polygon) < 3:
            raise ConfigError(f"partition {self.name!r}: polygon needs >= 3 vertices")
        for lat, lon in self.polygon:
            if not (isfinite(lat) and isfinite(lon)):
                raise ConfigError(f"partition {self.name!r}: non-finite vertex")


class PartitionSet:
    """Ordered partitions; assignment is total via the implicit outer region."""

    def __init__(self, partitions: Sequence[Partition]):
        names = [p.name for p in partitions]
        if len(set(names)) != len(names):
            raise ConfigError("partition names must be unique")
        if OUTER_NAME in names:
            raise ConfigError(f"partition name {OUTER_NAME!r} is reserved")
        self.partitions = tuple(partitions)

    @property
    def names(self) -> Tuple[str, ...]:
        """All region names in assignment-priority order, outer last."""
        return tuple(p.name for p in self.partitions) + (OUTER_NAME,)

    def __len__(self):
        return len(self.partitions)


def load_partitions(path) -> PartitionSet:
    """JSON file {"partitions": [{"name": ..., "polygon": [[lat, lon], ...]}]}."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read partition file {path}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"partition file {path} is not valid JSON: {e}")
    if not isinstance(data, dict) or set(data) != {"partitions"}:
        raise ConfigError('partition file must be an object with a single "partitions" key')
    if not isinstance(data["partitions"], list) or not data["partitions"]:
        raise ConfigError("partitions must be a non-empty list")
    parts = []
    for i, entry in enumerate(data["partitions"]):
        if not isinstance(entry, dict) or set(entry) != {"name", "polygon"}:
            raise ConfigError(f"partition #{i}: need exactly the keys name, polygon")
        name = entry["name"]
        poly = entry["polygon"]
        if not isinstance(name, str):
            raise ConfigError(f"partition #{i}: name must be a string")
        if not isinstance(poly, list) or not all(
            isinstance(v, list) and len(v) == 2 and all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in v)
            for v in poly
        ):
            raise ConfigError(f"partition {name!r}: polygon must be a list of [lat, lon] pairs")
        parts.append(Partition(name=name, polygon=tuple((float(a), float(b)) for a, b in poly)))
    return PartitionSet(parts)


def _on_segment(px, py, ax, ay, bx, by) -> bool:
    """Exact collinearity + bounding-box containment."""
    cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    if cross != 0.0:
        return False
    return min(ax, bx) <= px <= max(ax, bx) and min(ay, by) <= py <= max(ay, by)


def point_in_polygon(lat: float, lon: float, polygon: Sequence[Tuple[float, float]]) -> bool:
    """Even-odd ray casting in the lat/lon plane; boundary points are inside."""
    n = len(polygon)
    inside = False
    for i in range(n):
        ax, ay = polygon[i]
        bx, by = polygon[(i + 1) % n]
        if _on_segment(lat, lon, ax, ay, bx, by):
            return True
        # does the edge cross the horizontal ray lon -> +inf at this lat?
        if (ay > lon) != (by > lon):
            x_cross = ax + (lon - ay) * (bx - ax) / (by - ay)
            if x_cross > lat:
                inside = not inside
    return inside


def point_partition(p: GpsPoint, ps: PartitionSet) -> str:
    """First polygon containing the point, else the outer region."""
    for part in ps.partitions:
        if point_in_polygon(p.lat, p.lon, part.polygon):
            return part.name
    return OUTER_NAME


def assign_trajectory(traj: Trajectory, ps: PartitionSet) -> str:
    """The region containing the most points; ties go to the earliest-declared
    region, with the outer region losing all ties."""
    if not traj.points:
        raise DataError(f"trajectory {traj.traj_id}: cannot assign an empty trajectory")
    counts = {name: 0 for name in ps.names}
    for p in traj.points:
        counts[point_partition(p, ps)] += 1
    best = max(counts.values())
    for name in ps.names:          # declaration order; outer last
        if counts[name] == best:
            return name
    raise TrajmodeError("unreachable: no partition reached the maximum count")


def split_dataset(trajs: Sequence[Trajectory], ps: PartitionSet) -> Dict[str, List[Trajectory]]:
    """Group trajectories by assigned region; every region name is present."""
    groups: Dict[str, List[Trajectory]] = {name: [] for name in ps.names}
    for t in trajs:
        groups[assign_trajectory(t, ps)].append(t)
    return groups


def derive_seed(seed: int, name: str) -> int:
    """Per-region seed: master seed XOR the low 64 bits of sha256(name)."""
    h = hashlib.sha256(name.encode("utf-8")).digest()
    return (seed ^ int.from_bytes(h[:8], "little")) & 0xFFFFFFFFFFFFFFFF


@dataclass
class PartitionResult:
    name: str
    trajectories: int
    model: Optional[ModeClassifier]
    log: Optional[List[dict]]
    skipped_reason: Optional[str] = None

    @property
    def skipped(self) -> bool:
        return self.model is None


def train_partitioned(
    trajs: Sequence[Trajectory],
    ps: PartitionSet,
    cfg,
    seed: Optional[int] = None,
    parallel: Optional[bool] = None,
) -> List[PartitionResult]:
    """One independent training run per region, in declaration order.

    Regions whose sub-dataset cannot be trained on (too small, single
    class) are skipped with a warning; if every region is skipped that is
    an error, not an empty success.
    """
    seed = cfg.seed if seed is None else seed
    parallel = cfg.parallel if parallel is None else parallel
    groups = split_dataset(trajs, ps)
    jobs = [(name, groups[name], derive_seed(seed, name)) for name in ps.names]

    def run(job) -> PartitionResult:
        name, sub, sub_seed = job
        if not sub:
            return PartitionResult(name, 0, None, None, "no trajectories assigned")
        try:
            model, tlog = train(sub, cfg, seed=sub_seed)
        except DataError as e:
            return PartitionResult(name, len(sub), None, None, str(e))
        return PartitionResult(name, len(sub), model, tlog)

    if parallel and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=len(jobs)) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    for r in results:
        if r.skipped:
            log.warning("partition %r skipped (%d trajectories): %s", r.name, r.trajectories, r.skipped_reason)
    if all(r.skipped for r in results):
        raise DataError("every partition was skipped; nothing trained")
    return results


def predict_partitioned(
    trajs: Sequence[Trajectory],
    ps: PartitionSet,
    models: Mapping[str, Optional[ModeClassifier]],
) -> List[Tuple[str, str]]:
    """Route trajectories to their regions, predict with each region's model,
    and fuse.  Regions without a model yield the explicit unclassified marker."""
    groups = split_dataset(trajs, ps)
    per_partition: List[List[Tuple[str, str]]] = []
    for name in ps.names:
        sub = groups[name]
        if not sub:
            continue
        model = models.get(name)
        if model is None:
            per_partition.append([(t.traj_id, UNCLASSIFIED) for t in sub])
        else:
            preds = model.predict(sub)
            per_partition.append(list(zip((t.traj_id for t in sub), preds)))
    return fuse_predictions(per_partition)


def fuse_predictions(prediction_sets: Sequence[Sequence[Tuple[str, str]]]) -> List[Tuple[str, str]]:
    """Union of the per-region prediction sets, sorted by trajectory id.

    Region assignment is a partition of the dataset, so ids must be disjoint
    across sets; a duplicate means an upstream invariant broke.
    """
    merged: Dict[str, str] = {}
    for pset in prediction_sets:
        for traj_id, label in pset:
            if traj_id in merged:
                raise TrajmodeError(f"trajectory {traj_id!r} predicted by more than one partition")
            merged[traj_id] = label
    return sorted(merged.items())
