"""
Great-circle helpers on WGS84 degrees.
"""

from typing import Tuple, Union

import numpy as np

EARTH_RADIUS_M = 6_371_008.8
METERS_PER_DEG_LAT = 111_320.0

ArrayLike = Union[float, np.ndarray]


def haversine_m(lon1: ArrayLike, lat1: ArrayLike, lon2: ArrayLike, lat2: ArrayLike) -> ArrayLike:
    """
    Haversine distance in meters. Broadcasts over numpy arrays.

    Example:
        >>> round(float(haversine_m(0.0, 0.0, 0.0, 1.0)))
        111195
    """
    lon1, lat1, lon2, lat2 = map(np.radians, (lon1, lat1, lon2, lat2))
    dlon = lon2 - lon1
    dlat = lat2 - lat1
    a = np.sin(dlat / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def offset_degrees(lat: float, east_m: float, north_m: float) -> Tuple[float, float]:
    """Convert a local (east, north) offset in meters to (dlon, dlat) degrees."""
    dlat = north_m / METERS_PER_DEG_LAT
    dlon = east_m / (METERS_PER_DEG_LAT * np.cos(np.radians(lat)))
    return float(dlon), float(dlat)
