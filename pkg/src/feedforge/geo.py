"""Great-circle distance and bounding-box derivation for location-aware search.

Spherical model: store-locator precision needs are meters over kilometers, so
haversine on a mean-radius sphere suffices. The bounding box is a superset of
the radius disc; the exact radius cut happens client-side in the entry mapper.
"""

from __future__ import annotations

import math
from typing import NamedTuple

from .model import GeoPoint

EARTH_RADIUS_KM = 6371.0
# Kilometers per degree of latitude; pi * R / 180 so distances and boxes agree.
KM_PER_DEGREE = math.pi * EARTH_RADIUS_KM / 180.0


class DegenerateRegionError(ValueError):
    """Bounding box undefined: the center is too close to a pole."""


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance between two points in kilometers."""
    lat1, lon1 = math.radians(float(a.lat)), math.radians(float(a.lon))
    lat2, lon2 = math.radians(float(b.lat)), math.radians(float(b.lon))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(math.sqrt(min(1.0, h)))


class BoundingBox(NamedTuple):
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    @property
    def wraps(self) -> bool:
        """True when the box crosses the antimeridian."""
        return self.lon_min > self.lon_max

    def contains(self, p: GeoPoint) -> bool:
        lat, lon = float(p.lat), float(p.lon)
        if not (self.lat_min <= lat <= self.lat_max):
            return False
        if self.wraps:
            return lon >= self.lon_min or lon <= self.lon_max
        return self.lon_min <= lon <= self.lon_max


def _normalize_lon(lon: float) -> float:
    wrapped = (lon + 180.0) % 360.0 - 180.0
    # Keep +180 as +180 instead of flipping to -180.
    if wrapped == -180.0 and lon > 0:
        return 180.0
    return wrapped


def bounding_box(center: GeoPoint, radius_km) -> BoundingBox:
    """Smallest lat/lon box guaranteed to contain the whole radius disc.

    Latitude bounds are linear in the radius (clamped to the poles). The
    longitude half-width uses the spherical bound asin(sin d / cos lat),
    which at the equator reduces to radius / KM_PER_DEGREE and elsewhere is
    the tightest width that still covers the disc; the naive linear width
    undercovers at high latitudes. If the disc reaches a pole, every
    longitude is possible and the box spans the full [-180, 180].

    Raises DegenerateRegionError when the center is within one degree of a
    pole; callers fall back to latitude-only filtering.
    """
    radius = float(radius_km)
    if radius <= 0:
        raise ValueError(f"radius_km must be positive, got {radius_km}")
    lat = float(center.lat)
    lon = float(center.lon)
    if abs(lat) > 89.0:
        raise DegenerateRegionError(
            f"center latitude {lat} is within 1 degree of a pole")

    # Pad by ~0.1 mm so points computed at exactly radius distance cannot
    # escape through floating-point noise; superset must hold bit-for-bit.
    guard = 1e-9

    dlat = radius / KM_PER_DEGREE + guard
    lat_min = max(-90.0, lat - dlat)
    lat_max = min(90.0, lat + dlat)

    delta = radius / EARTH_RADIUS_KM  # angular radius
    lat_rad = math.radians(lat)
    if delta >= math.pi / 2 - abs(lat_rad):
        # Disc reaches a pole: all longitudes are inside.
        return BoundingBox(lat_min, lat_max, -180.0, 180.0)

    dlon = math.degrees(math.asin(math.sin(delta) / math.cos(lat_rad))) + guard
    if dlon >= 180.0:
        return BoundingBox(lat_min, lat_max, -180.0, 180.0)
    return BoundingBox(lat_min, lat_max,
                       _normalize_lon(lon - dlon), _normalize_lon(lon + dlon))
