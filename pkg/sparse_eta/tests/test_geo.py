"""
Tests for geo.py
"""

import numpy as np
import pytest

from sparse_eta.atoms.geo import haversine_m, offset_degrees


def test_one_degree_of_latitude():
    assert haversine_m(0.0, 0.0, 0.0, 1.0) == pytest.approx(111_195.0, abs=1.0)


def test_zero_distance():
    assert haversine_m(108.94, 34.26, 108.94, 34.26) == pytest.approx(0.0)


def test_broadcasts_over_arrays():
    lons = np.array([0.0, 0.0, 1.0])
    lats = np.array([0.0, 1.0, 0.0])
    d = haversine_m(0.0, 0.0, lons, lats)
    assert d.shape == (3,)
    assert d[0] == pytest.approx(0.0)
    assert d[1] == pytest.approx(d[2], rel=1e-9)


def test_offset_round_trip():
    lat = 34.26
    dlon, dlat = offset_degrees(lat, east_m=500.0, north_m=-300.0)
    east = haversine_m(108.94, lat, 108.94 + dlon, lat)
    north = haversine_m(108.94, lat, 108.94, lat + dlat)
    assert east == pytest.approx(500.0, rel=1e-2)
    assert north == pytest.approx(300.0, rel=1e-2)
    assert dlat < 0.0
