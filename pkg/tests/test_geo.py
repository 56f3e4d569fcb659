import math

import numpy as np
import pytest

from trajmode.geo import EARTH_RADIUS_M, bearing_deg, haversine_m


def test_haversine_zero_distance():
    assert haversine_m(39.9, 116.3, 39.9, 116.3) == 0.0


def test_haversine_one_degree_longitude_at_equator():
    # arc length = R * 1 degree
    expected = EARTH_RADIUS_M * math.radians(1.0)
    assert haversine_m(0.0, 0.0, 0.0, 1.0) == pytest.approx(expected, rel=1e-12)


def test_haversine_pole_to_pole():
    assert haversine_m(90.0, 0.0, -90.0, 0.0) == pytest.approx(math.pi * EARTH_RADIUS_M, rel=1e-12)


def test_haversine_symmetry():
    rng = np.random.default_rng(1)
    for _ in range(50):
        a = rng.uniform(-90, 90), rng.uniform(-180, 180)
        b = rng.uniform(-90, 90), rng.uniform(-180, 180)
        assert haversine_m(*a, *b) == haversine_m(*b, *a)


def test_haversine_antipodal_does_not_nan():
    # floating error can push the haversine argument past 1; must stay finite
    d = haversine_m(12.345, 67.89, -12.345, 67.89 - 180.0)
    assert math.isfinite(d)
    # sqrt/asin lose a few digits right at the antipode; ~1e-8 relative is
    # the best the formula can do there.
    assert d == pytest.approx(math.pi * EARTH_RADIUS_M, rel=1e-6)


def test_bearing_cardinal_directions():
    assert bearing_deg(0.0, 0.0, 1.0, 0.0) == pytest.approx(0.0, abs=1e-12)
    assert bearing_deg(0.0, 0.0, 0.0, 1.0) == pytest.approx(90.0, abs=1e-12)
    assert bearing_deg(0.0, 0.0, -1.0, 0.0) == pytest.approx(180.0, abs=1e-12)
    assert bearing_deg(0.0, 0.0, 0.0, -1.0) == pytest.approx(270.0, abs=1e-12)


def test_bearing_range_and_identical_points():
    assert bearing_deg(5.0, 5.0, 5.0, 5.0) == 0.0
    rng = np.random.default_rng(2)
    for _ in range(500):
        th = bearing_deg(rng.uniform(-80, 80), rng.uniform(-179, 179),
                         rng.uniform(-80, 80), rng.uniform(-179, 179))
        assert 0.0 <= th < 360.0


def test_bearing_quadrants():
    assert 0.0 < bearing_deg(0.0, 0.0, 1.0, 1.0) < 90.0
    assert 90.0 < bearing_deg(0.0, 0.0, -1.0, 1.0) < 180.0
    assert 180.0 < bearing_deg(0.0, 0.0, -1.0, -1.0) < 270.0
    assert 270.0 < bearing_deg(0.0, 0.0, 1.0, -1.0) < 360.0
