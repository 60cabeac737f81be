"""Spherical-earth geometry helpers shared by the matcher, reports, and the simulator."""

from __future__ import annotations

import math

import numpy as np

EARTH_RADIUS_M = 6_371_000.0


def haversine_m(lat1, lon1, lat2, lon2):
    """Great-circle distance in meters on a sphere of radius EARTH_RADIUS_M.

    Accepts scalars or numpy arrays (broadcasting applies).
    """
    p1 = np.radians(lat1)
    p2 = np.radians(lat2)
    dphi = p2 - p1
    dlam = np.radians(np.asarray(lon2) - np.asarray(lon1))
    a = np.sin(dphi / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlam / 2.0) ** 2
    a = np.clip(a, 0.0, 1.0)
    out = 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(a))
    if np.isscalar(lat1) and np.isscalar(lat2):
        return float(out)
    return out


def initial_bearing_deg(lat1, lon1, lat2, lon2):
    """Compass bearing (degrees, 0 = north, clockwise) from point 1 to point 2."""
    p1 = np.radians(lat1)
    p2 = np.radians(lat2)
    dlam = np.radians(np.asarray(lon2) - np.asarray(lon1))
    x = np.sin(dlam) * np.cos(p2)
    y = np.cos(p1) * np.sin(p2) - np.sin(p1) * np.cos(p2) * np.cos(dlam)
    out = np.degrees(np.arctan2(x, y)) % 360.0
    if np.isscalar(lat1) and np.isscalar(lat2):
        return float(out)
    return out


def wrap_deg(angle):
    """Wrap an angle difference into (-180, 180]."""
    return -((-np.asarray(angle) + 180.0) % 360.0 - 180.0)


def lat_step_deg(dist_m: float) -> float:
    """Latitude increment whose north-south arc is exactly dist_m."""
    return math.degrees(dist_m / EARTH_RADIUS_M)


def lon_step_deg(dist_m: float, lat_deg: float) -> float:
    """Longitude increment whose east-west great-circle arc at lat_deg is exactly dist_m.

    Inverts the haversine formula so that distances recomputed from the
    emitted coordinates reproduce dist_m to machine precision.
    """
    half = math.sin(dist_m / (2.0 * EARTH_RADIUS_M))
    return math.degrees(2.0 * math.asin(half / math.cos(math.radians(lat_deg))))


def offset_latlon(lat: float, lon: float, north_m: float, east_m: float) -> tuple[float, float]:
    """Displace a coordinate by local north/east meters (small offsets only)."""
    dlat = math.degrees(north_m / EARTH_RADIUS_M)
    dlon = math.degrees(east_m / (EARTH_RADIUS_M * math.cos(math.radians(lat))))
    return lat + dlat, lon + dlon


class LocalProjection:
    """Equirectangular projection onto a local tangent plane, in meters.

    Accurate to well under candidate-search tolerances for spans of a few
    kilometers; distances at city scale differ from great-circle by a
    relative error of order (span / earth radius)^2.
    """

    def __init__(self, lat0: float, lon0: float):
        self.lat0 = float(lat0)
        self.lon0 = float(lon0)
        self._coslat = math.cos(math.radians(lat0))
        self._k = EARTH_RADIUS_M * math.pi / 180.0

    def to_xy(self, lat, lon):
        x = (np.asarray(lon) - self.lon0) * self._k * self._coslat
        y = (np.asarray(lat) - self.lat0) * self._k
        return x, y

    def to_latlon(self, x, y):
        lat = np.asarray(y) / self._k + self.lat0
        lon = np.asarray(x) / (self._k * self._coslat) + self.lon0
        return lat, lon


def project_point_to_polyline(px: float, py: float, xs: np.ndarray, ys: np.ndarray):
    """Closest point on a polyline (projected coordinates) to (px, py).

    Returns (distance, along_fraction, qx, qy) where along_fraction is the
    arc-length position of the closest point as a fraction of total length.
    """
    ax = xs[:-1]
    ay = ys[:-1]
    bx = xs[1:]
    by = ys[1:]
    dx = bx - ax
    dy = by - ay
    seg_len2 = dx * dx + dy * dy
    seg_len2 = np.where(seg_len2 <= 0.0, 1.0, seg_len2)
    t = ((px - ax) * dx + (py - ay) * dy) / seg_len2
    t = np.clip(t, 0.0, 1.0)
    qx = ax + t * dx
    qy = ay + t * dy
    d2 = (px - qx) ** 2 + (py - qy) ** 2
    i = int(np.argmin(d2))
    seg_lens = np.sqrt((bx - ax) ** 2 + (by - ay) ** 2)
    total = float(seg_lens.sum())
    if total <= 0.0:
        return float(np.sqrt(d2[i])), 0.0, float(xs[0]), float(ys[0])
    upto = float(seg_lens[:i].sum()) + float(t[i]) * float(seg_lens[i])
    along = min(max(upto / total, 0.0), 1.0)
    return float(np.sqrt(d2[i])), along, float(qx[i]), float(qy[i])


def polyline_length_m(latlon: np.ndarray) -> float:
    """Great-circle length of a lat/lon polyline."""
    if len(latlon) < 2:
        return 0.0
    d = haversine_m(latlon[:-1, 0], latlon[:-1, 1], latlon[1:, 0], latlon[1:, 1])
    return float(np.sum(d))


def point_along_polyline(latlon: np.ndarray, along: float) -> tuple[float, float]:
    """Coordinate at a given arc-length fraction of a lat/lon polyline."""
    if len(latlon) == 1 or along <= 0.0:
        return float(latlon[0, 0]), float(latlon[0, 1])
    seg = haversine_m(latlon[:-1, 0], latlon[:-1, 1], latlon[1:, 0], latlon[1:, 1])
    total = float(np.sum(seg))
    if total <= 0.0 or along >= 1.0:
        return float(latlon[-1, 0]), float(latlon[-1, 1])
    target = along * total
    upto = 0.0
    for i in range(len(seg)):
        if upto + seg[i] >= target or i == len(seg) - 1:
            f = 0.0 if seg[i] <= 0 else (target - upto) / seg[i]
            lat = latlon[i, 0] + f * (latlon[i + 1, 0] - latlon[i, 0])
            lon = latlon[i, 1] + f * (latlon[i + 1, 1] - latlon[i, 1])
            return float(lat), float(lon)
        upto += seg[i]
    return float(latlon[-1, 0]), float(latlon[-1, 1])
