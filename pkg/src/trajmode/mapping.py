"""Trajectory rasterization: fixed-size feature images over a bounding box.

Each trajectory is mapped onto a ``cells_x × cells_y`` grid spanning its own
minimum bounding rectangle.  Every touched cell carries three channels:

* channel 0 — azimuth (degrees, [0, 360)) from the first to the last point
  seen in the cell,
* channel 1 — average speed (m/s) while inside the cell,
* channel 2 — stay time (seconds) between first and last visit.

Untouched cells stay all-zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .data import GpsPoint, Trajectory
from .errors import DataError
from .geo import bearing_deg, haversine_m


@dataclass(frozen=True)
class GridConfig:
    cells_x: int = 40
    cells_y: int = 40

    def __post_init__(self):
        if self.cells_x < 1 or self.cells_y < 1:
            raise DataError("grid must have at least one cell per axis")


@dataclass(frozen=True)
class BoundingBox:
    min_lon: float
    min_lat: float
    max_lon: float
    max_lat: float

    def __post_init__(self):
        if self.max_lon < self.min_lon or self.max_lat < self.min_lat:
            raise DataError("bounding box max must not be below min")


@dataclass
class TrajectoryImage:
    grid: GridConfig
    channels: np.ndarray   # (cells_x, cells_y, 3) float64


def bounding_box(traj: Trajectory) -> BoundingBox:
    """Tight min/max rectangle over all points; degenerate boxes allowed."""
    if not traj.points:
        raise DataError("cannot bound an empty trajectory")
    lats = [p.lat for p in traj.points]
    lons = [p.lon for p in traj.points]
    return BoundingBox(min(lons), min(lats), max(lons), max(lats))


def cell_index(p: GpsPoint, box: BoundingBox, grid: GridConfig) -> Tuple[int, int]:
    """Grid cell (x, y) of a point; the box is divided into uniform cells.

    Points on the far edge clamp into the last cell; an axis with zero
    extent maps everything to index 0.
    """
    if not (box.min_lon <= p.lon <= box.max_lon and box.min_lat <= p.lat <= box.max_lat):
        raise DataError(f"point ({p.lat}, {p.lon}) outside bounding box")
    ext_x = box.max_lon - box.min_lon
    ext_y = box.max_lat - box.min_lat
    if ext_x == 0.0:
        x = 0
    else:
        x = min(grid.cells_x - 1, int(math.floor((p.lon - box.min_lon) / (ext_x / grid.cells_x))))
    if ext_y == 0.0:
        y = 0
    else:
        y = min(grid.cells_y - 1, int(math.floor((p.lat - box.min_lat) / (ext_y / grid.cells_y))))
    return x, y


def bearing(a: GpsPoint, b: GpsPoint) -> float:
    """Initial great-circle bearing a→b in [0, 360); 0 for identical points."""
    return bearing_deg(a.lat, a.lon, b.lat, b.lon)


def build_image(traj: Trajectory, grid: GridConfig = GridConfig()) -> TrajectoryImage:
    """Rasterize one trajectory per the cell-accumulator scheme.

    One pass over the points keeps, per touched cell, the point count, the
    first and last point seen, and the distance covered (each consecutive
    pair's distance accrues to the earlier point's cell).  Touched cells are
    then finalized to (azimuth, speed, stay time); a cell visited for a
    single instant gets speed 0, and a cell whose first and last points
    coincide gets azimuth 0.
    """
    if not traj.points:
        raise DataError("cannot rasterize an empty trajectory")
    box = bounding_box(traj)
    acc = {}   # (x, y) -> [n, p_s, p_e, d]
    prev_cell = None
    prev_point = None
    for p in traj.points:
        cell = cell_index(p, box, grid)
        slot = acc.get(cell)
        if slot is None:
            acc[cell] = [1, p, p, 0.0]
        else:
            slot[0] += 1
            slot[2] = p
        if prev_point is not None:
            acc[prev_cell][3] += haversine_m(prev_point.lat, prev_point.lon, p.lat, p.lon)
        prev_cell = cell
        prev_point = p

    channels = np.zeros((grid.cells_x, grid.cells_y, 3), dtype=np.float64)
    for (x, y), (_, p_s, p_e, d) in acc.items():
        st = p_e.ts - p_s.ts
        channels[x, y, 0] = bearing(p_s, p_e)
        channels[x, y, 1] = d / st if st > 0 else 0.0
        channels[x, y, 2] = st
    return TrajectoryImage(grid, channels)


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel min/max gathered from a training set."""

    cmin: Tuple[float, float, float]
    cmax: Tuple[float, float, float]


def normalize_channels(
    images: Sequence[TrajectoryImage],
    stats: Optional[ChannelStats] = None,
) -> Tuple[List[TrajectoryImage], ChannelStats]:
    """Min-max scale every channel to [0, 1].

    Statistics are computed over the whole image set when absent (training)
    and reused verbatim when given (evaluation/prediction); out-of-range
    values are clipped.  A constant channel maps to all-zeros.
    """
    if stats is None:
        if not images:
            raise DataError("cannot derive channel statistics from an empty image set")
        stacked = np.stack([im.channels for im in images])
        cmin = tuple(float(v) for v in stacked.min(axis=(0, 1, 2)))
        cmax = tuple(float(v) for v in stacked.max(axis=(0, 1, 2)))
        stats = ChannelStats(cmin, cmax)
    lo = np.asarray(stats.cmin, dtype=np.float64)
    span = np.asarray(stats.cmax, dtype=np.float64) - lo
    safe = np.where(span > 0, span, 1.0)
    out = []
    for im in images:
        scaled = np.clip((im.channels - lo) / safe, 0.0, 1.0)
        scaled[..., span == 0] = 0.0
        out.append(TrajectoryImage(im.grid, scaled))
    return out, stats


def write_ppm(image: TrajectoryImage, path) -> None:
    """Debug dump of a normalized image as binary PPM (P6), north up."""
    ch = image.channels
    if ch.min() < 0.0 or ch.max() > 1.0:
        raise DataError("write_ppm expects a normalized image")
    w, h = image.grid.cells_x, image.grid.cells_y
    rgb = np.rint(ch * 255.0).astype(np.uint8)
    rows = rgb.transpose(1, 0, 2)[::-1]      # (y, x, 3), top row = max latitude
    with Path(path).open("wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rows.tobytes())
