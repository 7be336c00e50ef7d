"""Spherical geometry helpers for the synthetic world."""

from __future__ import annotations

import math
from typing import Sequence

EARTH_RADIUS_KM = 6371.0088

LatLon = tuple[float, float]


def haversine_km(a: LatLon, b: LatLon) -> float:
    """Great-circle distance between two (lat, lon) points in degrees."""
    lat1, lon1 = math.radians(a[0]), math.radians(a[1])
    lat2, lon2 = math.radians(b[0]), math.radians(b[1])
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def polyline_length_km(points: Sequence[LatLon]) -> float:
    return sum(haversine_km(points[i], points[i + 1]) for i in range(len(points) - 1))


def _project_km(p: LatLon, ref_lat: float) -> tuple[float, float]:
    """Equirectangular projection to local kilometers around ref_lat."""
    scale = math.pi / 180.0 * EARTH_RADIUS_KM
    return (p[0] * scale, p[1] * scale * math.cos(math.radians(ref_lat)))


def point_segment_km(p: LatLon, a: LatLon, b: LatLon) -> float:
    """Distance from p to the segment a-b, via a local planar projection
    centered on the segment. Accurate for the city-scale spans used here."""
    ref_lat = (a[0] + b[0]) / 2.0
    px, py = _project_km(p, ref_lat)
    ax, ay = _project_km(a, ref_lat)
    bx, by = _project_km(b, ref_lat)
    dx, dy = bx - ax, by - ay
    norm2 = dx * dx + dy * dy
    if norm2 == 0.0:
        return math.hypot(px - ax, py - ay)
    t = max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / norm2))
    cx, cy = ax + t * dx, ay + t * dy
    return math.hypot(px - cx, py - cy)


def point_polyline_km(p: LatLon, polyline: Sequence[LatLon]) -> float:
    if len(polyline) == 1:
        return haversine_km(p, polyline[0])
    return min(
        point_segment_km(p, polyline[i], polyline[i + 1]) for i in range(len(polyline) - 1)
    )
