"""Spherical distance and small-area planar helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import NonPositiveInterval

# IUGG mean Earth radius.
EARTH_RADIUS_M = 6_371_008.8


@dataclass(frozen=True, slots=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude out of range: {self.lon}")


@dataclass(frozen=True, slots=True)
class Waypoint:
    """A timestamped fix. ``time`` is UTC epoch seconds."""

    point: GeoPoint
    time: float
    source_index: int = 0

    def __post_init__(self):
        if not math.isfinite(self.time):
            raise ValueError(f"non-finite timestamp {self.time}")

    @property
    def lat(self) -> float:
        return self.point.lat

    @property
    def lon(self) -> float:
        return self.point.lon


def haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in meters between two lat/lon pairs in degrees."""
    p1 = math.radians(lat1)
    p2 = math.radians(lat2)
    dphi = p2 - p1
    dlmb = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


def haversine_distance(a: GeoPoint, b: GeoPoint) -> float:
    return haversine_m(a.lat, a.lon, b.lat, b.lon)


def speed_between(a: Waypoint, b: Waypoint) -> float:
    """Average speed in m/s from ``a`` to ``b``.

    Raises NonPositiveInterval unless ``b`` is strictly later than ``a``.
    """
    dt = b.time - a.time
    if dt <= 0:
        raise NonPositiveInterval(f"interval {dt} s between {a.time} and {b.time}")
    return haversine_distance(a.point, b.point) / dt


def interpolate(a: GeoPoint, b: GeoPoint, f: float) -> GeoPoint:
    """Linear interpolation in lat/lon space; fine for the few-meter spans we fill."""
    return GeoPoint(a.lat + (b.lat - a.lat) * f, a.lon + (b.lon - a.lon) * f)


def interpolate_great_circle(a: GeoPoint, b: GeoPoint, f: float) -> GeoPoint:
    """Point a fraction ``f`` of the way from ``a`` to ``b`` along the great circle.

    Distances from ``a`` scale exactly with ``f``, so evenly spaced fractions
    give evenly spaced points (and speeds equal to the pair's average).
    """
    la1, lo1, la2, lo2 = map(math.radians, (a.lat, a.lon, b.lat, b.lon))
    u = (math.cos(la1) * math.cos(lo1), math.cos(la1) * math.sin(lo1), math.sin(la1))
    v = (math.cos(la2) * math.cos(lo2), math.cos(la2) * math.sin(lo2), math.sin(la2))
    omega = haversine_m(a.lat, a.lon, b.lat, b.lon) / EARTH_RADIUS_M  # central angle
    if omega < 1e-12:
        return interpolate(a, b, f)
    s = math.sin(omega)
    wa, wb = math.sin((1 - f) * omega) / s, math.sin(f * omega) / s
    x, y, z = (wa * p + wb * q for p, q in zip(u, v))
    lat = math.degrees(math.atan2(z, math.hypot(x, y)))
    lon = math.degrees(math.atan2(y, x))
    if abs(b.lon - a.lon) < 180:
        # longitude is monotone along a short arc; clamp away round-off so a
        # fix between two points on a meridian stays on that meridian
        lon = min(max(lon, min(a.lon, b.lon)), max(a.lon, b.lon))
    return GeoPoint(lat, lon)


def _line_length(a: GeoPoint, b: GeoPoint, s: float, n: int = 16) -> float:
    """Length in meters of the straight lat/lon line from ``a`` to fraction ``s`` (Simpson's rule)."""
    dphi, dlmb = math.radians(b.lat - a.lat), math.radians(b.lon - a.lon)
    phi0 = math.radians(a.lat)

    def speed(u: float) -> float:
        return EARTH_RADIUS_M * math.hypot(dphi, math.cos(phi0 + u * dphi) * dlmb)

    h = s / n
    total = speed(0.0) + speed(s)
    for k in range(1, n):
        total += (4 if k % 2 else 2) * speed(k * h)
    return total * h / 3


def interpolate_along_line(a: GeoPoint, b: GeoPoint, f: float) -> GeoPoint:
    """Point on the straight lat/lon line from ``a`` to ``b`` a fraction ``f`` of its length along.

    Unlike :func:`interpolate`, evenly spaced fractions give evenly spaced
    points on the ground. The line stays inside any convex lat/lon polygon
    holding both ends, which the great circle need not.
    """
    if f <= 0.0 or f >= 1.0 or a == b:
        return interpolate(a, b, min(max(f, 0.0), 1.0))
    target = f * _line_length(a, b, 1.0)
    dphi, dlmb = math.radians(b.lat - a.lat), math.radians(b.lon - a.lon)
    s = f
    for _ in range(8):
        slope = EARTH_RADIUS_M * math.hypot(dphi, math.cos(math.radians(a.lat) + s * dphi) * dlmb)
        ds = (_line_length(a, b, s) - target) / slope
        s = min(max(s - ds, 0.0), 1.0)
        if abs(ds) < 1e-15:
            break
    return interpolate(a, b, s)


class LocalFrame:
    """Equirectangular tangent plane around a reference latitude/longitude.

    Distances within a few kilometres of the origin are accurate to well under
    a percent, which is all the candidate search and projection need; reported
    distances are always recomputed with haversine.
    """

    __slots__ = ("lat0", "lon0", "kx", "ky")

    def __init__(self, lat0: float, lon0: float):
        self.lat0 = lat0
        self.lon0 = lon0
        self.ky = math.radians(1.0) * EARTH_RADIUS_M
        self.kx = self.ky * math.cos(math.radians(lat0))

    def to_xy(self, lat: float, lon: float) -> tuple[float, float]:
        return (lon - self.lon0) * self.kx, (lat - self.lat0) * self.ky

    def to_latlon(self, x: float, y: float) -> tuple[float, float]:
        return self.lat0 + y / self.ky, self.lon0 + x / self.kx


def project_to_segment(
    px: float, py: float, ax: float, ay: float, bx: float, by: float
) -> float:
    """Fraction in [0, 1] along a->b of the point closest to p (planar)."""
    dx = bx - ax
    dy = by - ay
    denom = dx * dx + dy * dy
    if denom == 0.0:
        return 0.0
    t = ((px - ax) * dx + (py - ay) * dy) / denom
    if t <= 0.0:
        return 0.0
    if t >= 1.0:
        return 1.0
    return t
