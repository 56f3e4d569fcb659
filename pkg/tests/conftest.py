from pathlib import Path

import numpy as np
import pytest

from trajmode.config import from_dict
from trajmode.data import GpsPoint, Trajectory, class_labels

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


def tiny_config(**over):
    """A config small enough that training finishes in well under a second."""
    base = {
        "grid": {"cells_x": 12, "cells_y": 12},
        "seq_len": 48,
        "cnn": {"blocks": 2, "channels": [6, 8]},
        "tcn": {"hidden_units": 6, "kernel": 3, "dilation_base": 2, "levels": 2, "dropout": 0.05},
        "optimizer": {"lr": 0.002, "batch_size": 8, "epochs": 2},
        "stl": {"period": 12},
        "classes": ["slow", "fast"],
        "label_map": {"slow": "slow", "fast": "fast"},
        "seed": 0,
    }
    base.update(over)
    return from_dict(base)


@pytest.fixture
def small_cfg():
    return tiny_config()


def two_mode_trajectory(rng, traj_id: str, fast: bool, labels, n: int = 40,
                        lat0: float = 39.9, lon0: float = 116.3) -> Trajectory:
    """Minimal fast-vs-slow trajectory for unit-scale training tests."""
    lat = lat0 + rng.normal(0, 0.05)
    lon = lon0 + rng.normal(0, 0.05)
    speed = 0.003 if fast else 0.0003
    heading = rng.uniform(0, 2 * np.pi)
    t0 = 1_300_000_000.0 + rng.integers(0, 1_000_000)
    pts = []
    for j in range(n):
        heading += rng.normal(0, 0.05 if fast else 0.6)
        lat += speed * np.cos(heading)
        lon += speed * np.sin(heading)
        pts.append(GpsPoint(j, lat, lon, t0 + j * (10.0 if fast else 30.0)))
    return Trajectory(traj_id, pts, labels[1 if fast else 0])


@pytest.fixture
def two_mode_trajs():
    rng = np.random.default_rng(7)
    labels = class_labels(("slow", "fast"))
    return [two_mode_trajectory(rng, f"t{i:03d}", i % 2 == 0, labels) for i in range(30)]
