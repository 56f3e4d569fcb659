"""PLT parsing, label joining, and stay-point segmentation.

The fixture tree under fixtures/mini_geolife is constructed so every
statistic has a hand-computed expected value; see the assertions in
test_ingest_fixture_hand_counts.
"""
import numpy as np
import pytest

from trajmode.data import GpsPoint, IngestStats, Trajectory, class_labels
from trajmode.errors import DataError, ParseError
from trajmode.geolife import (
    LabelInterval,
    StayPointConfig,
    ingest_directory,
    label_join,
    parse_labels,
    parse_plt,
    segment_stay_points,
)

HEADER = "h1\nh2\nh3\nh4\nh5\nh6\n"


def _plt(rows):
    return HEADER + "\n".join(rows) + "\n"


def _row(lat, lon, date, time):
    return f"{lat},{lon},0,492,39569.0,{date},{time}"


class TestParsePlt:
    def test_basic(self):
        content = _plt([
            _row(39.9, 116.3, "2008-05-01", "09:00:00"),
            _row(39.91, 116.31, "2008-05-01", "09:00:30"),
        ])
        t = parse_plt(content, traj_id="u/f")
        assert t.traj_id == "u/f"
        assert len(t.points) == 2
        assert t.points[1].ts - t.points[0].ts == 30.0
        assert t.points[0].id == 0 and t.points[1].id == 1

    def test_bytes_input(self):
        content = _plt([_row(39.9, 116.3, "2008-05-01", "09:00:00")]).encode()
        assert len(parse_plt(content).points) == 1

    def test_drops_nonadvancing_timestamps(self):
        stats = IngestStats()
        content = _plt([
            _row(39.90, 116.3, "2008-05-01", "09:00:00"),
            _row(39.91, 116.3, "2008-05-01", "09:00:00"),   # duplicate ts
            _row(39.92, 116.3, "2008-05-01", "08:59:00"),   # goes backwards
            _row(39.93, 116.3, "2008-05-01", "09:01:00"),
        ])
        t = parse_plt(content, stats=stats)
        assert [p.lat for p in t.points] == [39.90, 39.93]
        assert stats.points_dropped_ts == 2
        assert stats.points_read == 4

    def test_field_count_error_carries_line_number(self):
        content = _plt([_row(39.9, 116.3, "2008-05-01", "09:00:00"), "1,2,3"])
        with pytest.raises(ParseError) as ei:
            parse_plt(content)
        assert "line 8" in str(ei.value)    # 6 header lines + 2nd record

    def test_coordinate_out_of_range(self):
        with pytest.raises(ParseError):
            parse_plt(_plt([_row(99.0, 116.3, "2008-05-01", "09:00:00")]))

    def test_empty_file_is_error(self):
        with pytest.raises(DataError):
            parse_plt(HEADER)


class TestParseLabels:
    def test_basic(self):
        content = ("Start Time\tEnd Time\tTransportation Mode\n"
                   "2008/05/01 09:00:00\t2008/05/01 09:10:00\twalk\n"
                   "2008/05/01 09:10:00\t2008/05/01 09:20:00\tbus\n")
        ivs = parse_labels(content)
        assert len(ivs) == 2
        assert ivs[0].mode == "walk"
        assert ivs[1].end_ts - ivs[1].start_ts == 600.0

    def test_end_before_start_rejected(self):
        content = ("header\n"
                   "2008/05/01 09:10:00\t2008/05/01 09:00:00\twalk\n")
        with pytest.raises(DataError):
            parse_labels(content)

    def test_wrong_field_count(self):
        with pytest.raises(ParseError):
            parse_labels("header\n2008/05/01 09:00:00\twalk\n")


def _traj(ts_list, lat0=39.9, step=0.003):
    pts = [GpsPoint(i, lat0 + step * i, 116.3, t) for i, t in enumerate(ts_list)]
    return Trajectory("u/f", pts)


class TestLabelJoin:
    def test_two_runs_with_gap(self):
        traj = _traj([0, 30, 60, 200, 230, 500])
        ivs = [LabelInterval(0, 70, "walk"), LabelInterval(190, 240, "bus")]
        stats = IngestStats()
        segs = label_join(traj, ivs, stats=stats)
        assert [s.mode.name for s in segs] == ["walk", "bus"]
        assert [len(s.points) for s in segs] == [3, 2]
        assert segs[0].traj_id == "u/f/s0"
        assert segs[1].traj_id == "u/f/s1"
        assert stats.points_unlabeled == 1       # the point at ts=500
        # point ids are re-indexed per segment
        assert [p.id for p in segs[1].points] == [0, 1]

    def test_interval_boundaries_are_inclusive(self):
        traj = _traj([0, 10, 20])
        segs = label_join(traj, [LabelInterval(0, 20, "walk")])
        assert len(segs) == 1 and len(segs[0].points) == 3

    def test_touching_intervals_earlier_wins(self):
        # ts=20 lies on the boundary of both; it must join the earlier run
        traj = _traj([0, 20, 40])
        ivs = [LabelInterval(0, 20, "walk"), LabelInterval(20, 60, "bus")]
        segs = label_join(traj, ivs)
        assert [len(s.points) for s in segs] == [2, 1]
        assert [s.mode.name for s in segs] == ["walk", "bus"]

    def test_unmapped_mode_drops_run(self):
        traj = _traj([0, 10])
        stats = IngestStats()
        segs = label_join(traj, [LabelInterval(0, 20, "rocket")], stats=stats)
        assert segs == []
        assert stats.runs_unmapped == 1

    def test_label_map_renames(self):
        traj = _traj([0, 10])
        segs = label_join(traj, [LabelInterval(0, 20, "car")])
        assert segs[0].mode.name == "private_car"

    def test_no_intervals(self):
        stats = IngestStats()
        assert label_join(_traj([0, 10]), [], stats=stats) == []
        assert stats.points_unlabeled == 2


def _stay_traj(mode=None):
    """5 moving points, 12-point stay cluster (span 1320 s), 3 moving points."""
    labels = class_labels()
    pts = []
    k = 0
    for i in range(5):
        pts.append(GpsPoint(k, 39.9560 + 0.004 * i, 116.33, 120.0 * k)); k += 1
    for _ in range(12):
        pts.append(GpsPoint(k, 39.9760, 116.33, 120.0 * k)); k += 1
    for i in range(3):
        pts.append(GpsPoint(k, 39.9800 + 0.004 * i, 116.33, 120.0 * k)); k += 1
    return Trajectory("u/f/s0", pts, labels[0] if mode is None else mode)


class TestSegmentStayPoints:
    def test_no_stay_returns_same_object(self):
        t = _traj([0, 30, 60, 90])
        out = segment_stay_points(t)
        assert len(out) == 1
        assert out[0] is t                      # identity, not a copy

    def test_cut_at_stay(self):
        stats = IngestStats()
        segs = segment_stay_points(_stay_traj(), stats=stats)
        assert [len(s.points) for s in segs] == [5, 3]
        assert [s.traj_id for s in segs] == ["u/f/s0/c0", "u/f/s0/c1"]
        assert all(s.mode.name == "walk" for s in segs)
        assert stats.points_removed_stay == 12
        # points re-indexed from zero in each segment
        assert [p.id for p in segs[1].points] == [0, 1, 2]

    def test_entire_trajectory_is_stay(self):
        pts = [GpsPoint(i, 39.9, 116.3, 300.0 * i) for i in range(6)]
        stats = IngestStats()
        segs = segment_stay_points(Trajectory("x", pts, class_labels()[0]), stats=stats)
        assert segs == []
        assert stats.points_removed_stay == 6

    def test_short_leftover_dropped(self):
        # stay at the end leaves a single leading point... and 1-point pieces go away
        pts = [GpsPoint(0, 39.9, 116.3, 0.0)]
        pts += [GpsPoint(i + 1, 39.99, 116.3, 600.0 + 300.0 * i) for i in range(6)]
        stats = IngestStats()
        segs = segment_stay_points(Trajectory("x", pts, class_labels()[0]), stats=stats)
        assert segs == []
        assert stats.segments_dropped_short == 1

    def test_single_point_trajectory_dropped(self):
        stats = IngestStats()
        t = Trajectory("x", [GpsPoint(0, 39.9, 116.3, 0.0)], class_labels()[0])
        assert segment_stay_points(t, stats=stats) == []
        assert stats.segments_dropped_short == 1

    def test_idempotent(self):
        # segmenting any output segment again must be a no-op
        rng = np.random.default_rng(3)
        for trial in range(30):
            n = int(rng.integers(5, 60))
            lat = 39.9 + np.cumsum(rng.choice([0.0, 0.004], size=n, p=[0.6, 0.4]))
            ts = np.cumsum(rng.choice([30.0, 400.0], size=n))
            pts = [GpsPoint(i, float(lat[i]), 116.3, float(ts[i])) for i in range(n)]
            segs = segment_stay_points(Trajectory(f"r{trial}", pts, class_labels()[0]))
            for s in segs:
                again = segment_stay_points(s)
                assert len(again) == 1 and again[0] is s, f"trial {trial} not idempotent"

    def test_threshold_validation(self):
        with pytest.raises(DataError):
            StayPointConfig(dist_threshold_m=0.0)
        with pytest.raises(DataError):
            StayPointConfig(time_threshold_s=-5.0)


class TestIngestDirectory:
    def test_ingest_fixture_hand_counts(self, fixtures_dir):
        trajs, stats = ingest_directory(fixtures_dir / "mini_geolife")
        assert [(t.traj_id, t.mode.name, len(t.points)) for t in trajs] == [
            ("000/20080501090000/s0", "walk", 6),
            ("000/20080501090000/s1", "bus", 5),
            ("001/20080502080000/s0/c0", "train", 5),
            ("001/20080502080000/s0/c1", "train", 3),
            ("001/20080502120000/s1", "taxi", 3),
        ]
        assert stats.files == 3                 # user 002 has no labels.txt
        assert stats.points_read == 40
        assert stats.points_dropped_ts == 1
        assert stats.points_unlabeled == 2
        assert stats.runs_unmapped == 1
        assert stats.points_removed_stay == 12
        assert stats.segments_dropped_short == 1
        assert stats.trajectories == 5
        assert stats.per_mode == {"walk": 1, "bus": 1, "train": 2, "taxi": 1}

    def test_ingest_deterministic(self, fixtures_dir):
        a, _ = ingest_directory(fixtures_dir / "mini_geolife")
        b, _ = ingest_directory(fixtures_dir / "mini_geolife")
        assert [(t.traj_id, [p.ts for p in t.points]) for t in a] == \
               [(t.traj_id, [p.ts for p in t.points]) for t in b]

    def test_missing_directory(self, tmp_path):
        with pytest.raises(DataError):
            ingest_directory(tmp_path / "nope")
