"""GeoLife raw data ingest.

Handles the PLT point files, the per-user ``labels.txt`` mode annotations,
the join between the two, and stay-point segmentation.  The output is a
list of labeled :class:`~trajmode.data.Trajectory` segments in a stable
order: user directory, then file name, then segment start time.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .data import DEFAULT_LABEL_MAP, GpsPoint, IngestStats, Trajectory, label_for
from .errors import DataError, ParseError
from .geo import haversine_m

PLT_HEADER_LINES = 6


@dataclass(frozen=True)
class StayPointConfig:
    """Stay-point thresholds: a run of points that stays within
    ``dist_threshold_m`` of its first point for at least ``time_threshold_s``
    is treated as a stop and cut out of the trajectory."""

    dist_threshold_m: float = 200.0
    time_threshold_s: float = 1200.0

    def __post_init__(self):
        if self.dist_threshold_m <= 0 or self.time_threshold_s <= 0:
            raise DataError("stay-point thresholds must be positive")


def _parse_ts(date_s: str, time_s: str, fmt: str, lineno: int) -> float:
    try:
        dt = datetime.strptime(f"{date_s} {time_s}", fmt)
    except ValueError:
        raise ParseError(f"bad timestamp {date_s!r} {time_s!r}", line=lineno)
    return dt.replace(tzinfo=timezone.utc).timestamp()


def parse_plt(content, traj_id: str = "", stats: Optional[IngestStats] = None) -> Trajectory:
    """Parse one PLT file into an unlabeled trajectory.

    The first six lines are an ignored header.  Each record line is
    ``lat,lon,0,altitude,days,date,time``; altitude and the day number are
    discarded.  Points whose timestamp does not advance past the previously
    kept point are dropped (GeoLife logs contain duplicates and the odd
    backwards jump), which keeps timestamps strictly increasing.
    """
    if isinstance(content, bytes):
        try:
            content = content.decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError("file is not valid UTF-8")
    lines = content.splitlines()
    points: List[GpsPoint] = []
    last_ts = None
    for lineno, line in enumerate(lines[PLT_HEADER_LINES:], start=PLT_HEADER_LINES + 1):
        line = line.strip()
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 7:
            raise ParseError(f"expected 7 fields, got {len(fields)}", line=lineno)
        try:
            lat = float(fields[0])
            lon = float(fields[1])
        except ValueError:
            raise ParseError("bad coordinate", line=lineno)
        if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
            raise ParseError(f"coordinate out of range: {lat}, {lon}", line=lineno)
        ts = _parse_ts(fields[5], fields[6], "%Y-%m-%d %H:%M:%S", lineno)
        if stats is not None:
            stats.points_read += 1
        if last_ts is not None and ts <= last_ts:
            if stats is not None:
                stats.points_dropped_ts += 1
            continue
        points.append(GpsPoint(len(points), lat, lon, ts))
        last_ts = ts
    if not points:
        raise DataError(f"no points in trajectory {traj_id!r}")
    return Trajectory(traj_id, points)


@dataclass(frozen=True)
class LabelInterval:
    start_ts: float
    end_ts: float
    mode: str   # raw annotation, passed through verbatim


def parse_labels(content) -> List[LabelInterval]:
    """Parse a GeoLife ``labels.txt``: one header line, then tab-separated
    ``start<TAB>end<TAB>mode`` records with ``yyyy/mm/dd hh:mm:ss`` times."""
    if isinstance(content, bytes):
        try:
            content = content.decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError("file is not valid UTF-8")
    lines = content.splitlines()
    out: List[LabelInterval] = []
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ParseError(f"expected 3 tab-separated fields, got {len(fields)}", line=lineno)
        start_parts = fields[0].split(" ")
        end_parts = fields[1].split(" ")
        if len(start_parts) != 2 or len(end_parts) != 2:
            raise ParseError("bad timestamp", line=lineno)
        start = _parse_ts(start_parts[0], start_parts[1], "%Y/%m/%d %H:%M:%S", lineno)
        end = _parse_ts(end_parts[0], end_parts[1], "%Y/%m/%d %H:%M:%S", lineno)
        if end < start:
            raise DataError(f"line {lineno}: label interval ends before it starts")
        out.append(LabelInterval(start, end, fields[2].strip()))
    return out


def _interval_at(starts: Sequence[float], intervals: Sequence[LabelInterval], ts: float) -> Optional[int]:
    """Index of the interval containing ts (closed on both ends), or None.

    Intervals are sorted by start.  When two touching intervals share a
    boundary timestamp the earlier one wins.
    """
    idx = bisect.bisect_right(starts, ts) - 1
    for j in (idx - 1, idx):
        if 0 <= j < len(intervals) and intervals[j].start_ts <= ts <= intervals[j].end_ts:
            return j
    return None


def label_join(
    traj: Trajectory,
    intervals: Sequence[LabelInterval],
    label_map: Dict[str, str] = DEFAULT_LABEL_MAP,
    classes: Optional[Sequence[str]] = None,
    stats: Optional[IngestStats] = None,
) -> List[Trajectory]:
    """Split a trajectory into maximal runs of points covered by one label
    interval, producing one labeled segment per run.

    Points outside every interval are discarded; runs whose raw mode is not
    in ``label_map`` are dropped whole (both are counted in ``stats``).
    """
    ivs = sorted(intervals, key=lambda iv: iv.start_ts)
    starts = [iv.start_ts for iv in ivs]
    out: List[Trajectory] = []
    run: List[GpsPoint] = []
    run_iv: Optional[int] = None
    seq = 0

    def flush():
        nonlocal seq, run, run_iv
        if run_iv is not None and run:
            mode_raw = ivs[run_iv].mode
            target = label_map.get(mode_raw)
            if target is None:
                if stats is not None:
                    stats.runs_unmapped += 1
            else:
                label = label_for(target) if classes is None else label_for(target, classes)
                pts = [GpsPoint(i, p.lat, p.lon, p.ts) for i, p in enumerate(run)]
                out.append(Trajectory(f"{traj.traj_id}/s{seq}", pts, label))
                seq += 1
        run = []
        run_iv = None

    for p in traj.points:
        j = _interval_at(starts, ivs, p.ts)
        if j is None:
            if stats is not None:
                stats.points_unlabeled += 1
            flush()
            continue
        if j != run_iv:
            flush()
            run_iv = j
        run.append(p)
    flush()
    return out


def segment_stay_points(
    traj: Trajectory,
    cfg: StayPointConfig = StayPointConfig(),
    stats: Optional[IngestStats] = None,
) -> List[Trajectory]:
    """Cut a trajectory at its stay points.

    A stay point is a maximal run of consecutive points that all lie within
    ``cfg.dist_threshold_m`` of the run's first point while spanning at
    least ``cfg.time_threshold_s``.  Stay-point interiors are removed, the
    trajectory is cut at their boundaries, and segments shorter than two
    points are discarded.  Segments inherit the parent's mode.

    Segmenting a segment again returns it unchanged: each surviving point
    anchored a run whose time span was below the threshold, and inside a
    segment that run can only get shorter.
    """
    pts = traj.points
    n = len(pts)
    stretches: List[List[GpsPoint]] = []
    cur: List[GpsPoint] = []
    i = 0
    while i < n:
        j = i + 1
        while j < n and haversine_m(pts[i].lat, pts[i].lon, pts[j].lat, pts[j].lon) <= cfg.dist_threshold_m:
            j += 1
        if pts[j - 1].ts - pts[i].ts >= cfg.time_threshold_s:
            if stats is not None:
                stats.points_removed_stay += j - i
            if cur:
                stretches.append(cur)
                cur = []
            i = j
        else:
            cur.append(pts[i])
            i += 1
    if cur:
        stretches.append(cur)

    if len(stretches) == 1 and len(stretches[0]) == n and n >= 2:
        return [traj]    # true no-op, keep identity
    out: List[Trajectory] = []
    for seg in stretches:
        if len(seg) < 2:
            if stats is not None:
                stats.segments_dropped_short += 1
            continue
        repts = [GpsPoint(k, p.lat, p.lon, p.ts) for k, p in enumerate(seg)]
        out.append(Trajectory(f"{traj.traj_id}/c{len(out)}", repts, traj.mode))
    return out


def ingest_directory(
    root,
    label_map: Dict[str, str] = DEFAULT_LABEL_MAP,
    classes: Optional[Sequence[str]] = None,
    staypoint: StayPointConfig = StayPointConfig(),
) -> Tuple[List[Trajectory], IngestStats]:
    """Walk a GeoLife-layout tree (``<root>/<user>/Trajectory/*.plt`` plus
    ``<root>/<user>/labels.txt``) and return labeled, stay-point-segmented
    trajectories.  Users without a labels file are skipped: unlabeled data
    cannot contribute to supervised training.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"not a directory: {root}")
    stats = IngestStats()
    out: List[Trajectory] = []
    for user_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        labels_path = user_dir / "labels.txt"
        if not labels_path.is_file():
            continue
        intervals = parse_labels(labels_path.read_bytes())
        traj_dir = user_dir / "Trajectory"
        if not traj_dir.is_dir():
            continue
        for plt_path in sorted(traj_dir.glob("*.plt")):
            stats.files += 1
            traj_id = f"{user_dir.name}/{plt_path.stem}"
            traj = parse_plt(plt_path.read_bytes(), traj_id=traj_id, stats=stats)
            for labeled in label_join(traj, intervals, label_map, classes, stats=stats):
                for seg in segment_stay_points(labeled, staypoint, stats=stats):
                    out.append(seg)
                    stats.trajectories += 1
                    stats.count_mode(seg.mode.name)
    return out, stats
