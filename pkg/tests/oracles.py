"""Independent reference implementations used to cross-check the library.

Each oracle re-derives a result from first principles with a different
algorithm/data layout than the production code, so a shared bug would have
to be introduced twice to slip through.  Geometry primitives (haversine,
bearing) are taken from :mod:`trajmode.geo` because they are pinned to
closed-form values in test_geo.py; everything built on top of them is
recomputed here from scratch.
"""
from __future__ import annotations

import math
from typing import Dict, List, Sequence, Tuple

import numpy as np

from trajmode.data import Trajectory
from trajmode.geo import bearing_deg, haversine_m
from trajmode.mapping import BoundingBox, GridConfig


def raster_cells(traj: Trajectory, grid: GridConfig) -> Dict[Tuple[int, int], Tuple[float, float, float]]:
    """Expected (azimuth, speed, stay-time) per touched cell, by brute force.

    Instead of a single accumulator pass, group point *indices* per cell,
    then recompute each channel from the raw trajectory:

    * first/last point of a cell = min/max index in its group,
    * distance = sum over consecutive pairs (i, i+1) whose *earlier* point
      falls in the cell,
    * stay time = ts[last] - ts[first]; speed = distance / stay time when
      the stay time is positive, else 0; azimuth = bearing(first, last).
    """
    pts = traj.points
    lons = [p.lon for p in pts]
    lats = [p.lat for p in pts]
    box = BoundingBox(min(lons), min(lats), max(lons), max(lats))
    ext_x = box.max_lon - box.min_lon
    ext_y = box.max_lat - box.min_lat

    def cell_of(p) -> Tuple[int, int]:
        if ext_x == 0.0:
            x = 0
        else:
            x = min(grid.cells_x - 1, int(math.floor((p.lon - box.min_lon) / (ext_x / grid.cells_x))))
        if ext_y == 0.0:
            y = 0
        else:
            y = min(grid.cells_y - 1, int(math.floor((p.lat - box.min_lat) / (ext_y / grid.cells_y))))
        return x, y

    groups: Dict[Tuple[int, int], List[int]] = {}
    for i, p in enumerate(pts):
        groups.setdefault(cell_of(p), []).append(i)

    out: Dict[Tuple[int, int], Tuple[float, float, float]] = {}
    for cell, idxs in groups.items():
        first, last = min(idxs), max(idxs)
        dist = 0.0
        for i in idxs:
            if i + 1 < len(pts):
                a, b = pts[i], pts[i + 1]
                dist += haversine_m(a.lat, a.lon, b.lat, b.lon)
        st = pts[last].ts - pts[first].ts
        az = bearing_deg(pts[first].lat, pts[first].lon, pts[last].lat, pts[last].lon)
        speed = dist / st if st > 0 else 0.0
        out[cell] = (az, speed, st)
    return out


def raster_image(traj: Trajectory, grid: GridConfig) -> np.ndarray:
    """Full expected image array for :func:`trajmode.mapping.build_image`."""
    expected = np.zeros((grid.cells_x, grid.cells_y, 3), dtype=np.float64)
    for (x, y), (az, speed, st) in raster_cells(traj, grid).items():
        expected[x, y] = (az, speed, st)
    return expected


def polygon_winding(lat: float, lon: float, polygon: Sequence[Tuple[float, float]]) -> bool:
    """Point-in-polygon by winding number (vs. the library's ray casting).

    Treats the boundary as inside, matching the library contract.  Works in
    the (lat, lon) plane; vertices are (lat, lon) pairs.
    """
    n = len(polygon)
    # Boundary first: collinear + within the segment's bounding box.
    for i in range(n):
        ax, ay = polygon[i]
        bx, by = polygon[(i + 1) % n]
        cross = (bx - ax) * (lon - ay) - (by - ay) * (lat - ax)
        if cross == 0.0 and min(ax, bx) <= lat <= max(ax, bx) and min(ay, by) <= lon <= max(ay, by):
            return True
    winding = 0
    for i in range(n):
        ax, ay = polygon[i]
        bx, by = polygon[(i + 1) % n]
        if ay <= lon:
            if by > lon and (bx - ax) * (lon - ay) - (by - ay) * (lat - ax) > 0:
                winding += 1
        else:
            if by <= lon and (bx - ax) * (lon - ay) - (by - ay) * (lat - ax) < 0:
                winding -= 1
    return winding != 0


def recount_metrics(true_labels: Sequence[int], pred_labels: Sequence[int], k: int):
    """Confusion counts and summary scores by direct recounting.

    Returns (cm, acc, per_class, macro_f1) where per_class[c] is a dict of
    tp/fp/fn/tn/acc/precision/recall/f1 computed with plain loops.
    """
    cm = [[0] * k for _ in range(k)]
    for t, p in zip(true_labels, pred_labels):
        cm[t][p] += 1
    total = len(true_labels)
    correct = sum(1 for t, p in zip(true_labels, pred_labels) if t == p)
    acc = correct / total if total else 0.0

    def ratio(a, b):
        return a / b if b else 0.0

    per_class = []
    f1_present = []
    for c in range(k):
        tp = sum(1 for t, p in zip(true_labels, pred_labels) if t == c and p == c)
        fp = sum(1 for t, p in zip(true_labels, pred_labels) if t != c and p == c)
        fn = sum(1 for t, p in zip(true_labels, pred_labels) if t == c and p != c)
        tn = total - tp - fp - fn
        precision = ratio(tp, tp + fp)
        recall = ratio(tp, tp + fn)
        f1 = ratio(2 * precision * recall, precision + recall)
        per_class.append(
            dict(tp=tp, fp=fp, fn=fn, tn=tn, acc=ratio(tp + tn, total),
                 precision=precision, recall=recall, f1=f1)
        )
        if any(t == c for t in true_labels):
            f1_present.append(f1)
    macro = sum(f1_present) / len(f1_present) if f1_present else 0.0
    return np.array(cm), acc, per_class, macro


def random_trajectory(rng: np.random.Generator, traj_id: str, n: int) -> Trajectory:
    """Random walk with occasional revisits, exercising cell re-entry."""
    from trajmode.data import from_arrays

    lat0 = float(rng.uniform(-60, 60))
    lon0 = float(rng.uniform(-170, 170))
    lat = [lat0]
    lon = [lon0]
    for _ in range(n - 1):
        if rng.random() < 0.15:           # jump back near a previous point
            j = int(rng.integers(0, len(lat)))
            lat.append(lat[j] + float(rng.normal(0, 1e-5)))
            lon.append(lon[j] + float(rng.normal(0, 1e-5)))
        else:
            lat.append(lat[-1] + float(rng.normal(0, 0.01)))
            lon.append(lon[-1] + float(rng.normal(0, 0.01)))
    lat = np.clip(lat, -89.9, 89.9)
    lon = np.clip(lon, -179.9, 179.9)
    dt = rng.integers(1, 90, size=n - 1) if n > 1 else np.array([], dtype=int)
    ts = np.concatenate([[0.0], np.cumsum(dt)]) + 1.2e9
    return from_arrays(traj_id, lat, lon, ts)
