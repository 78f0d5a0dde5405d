"""Shared domain types and planar/3D geometry.

Everything lives in a local east-north-up metric frame: ``x`` east, ``y``
north, ``z`` up, in meters, with altitudes measured above the takeoff point.
All types are frozen dataclasses and safe to share between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

Z_TOLERANCE = 0.5
ROUTE_LABELS = ("main_lobe", "side_lobe", "back_lobe")
LIMIT_KINDS = ("field_strength", "rx_power", "inr")


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


@dataclass(frozen=True)
class GeoPoint:
    x: float
    y: float
    z: float = 0.0

    def __post_init__(self):
        if not _finite(self.x, self.y, self.z):
            raise ValueError(f"non-finite coordinate in {self!r}")
        if self.z < -Z_TOLERANCE:
            raise ValueError(f"z={self.z} is below the takeoff plane")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


@dataclass(frozen=True)
class Sample:
    """One scanner record; optional metrics are ``None`` when absent."""

    t: float
    pos: GeoPoint
    rsrp: float
    rsrq: float | None = None
    sinr: float | None = None
    rssi: float | None = None

    def __post_init__(self):
        if not math.isfinite(self.rsrp) or not -200.0 <= self.rsrp <= 0.0:
            raise ValueError(f"rsrp {self.rsrp} outside [-200, 0] dBm")


@dataclass(frozen=True)
class TelemetryPoint:
    t: float
    x: float
    y: float
    alt_baro: float

    @property
    def horiz(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class Route:
    id: int
    waypoints: tuple[GeoPoint, ...]
    leg_altitude: float
    label: str = "main_lobe"

    def __post_init__(self):
        object.__setattr__(self, "waypoints", tuple(self.waypoints))
        if len(self.waypoints) < 2:
            raise ValueError(f"route {self.id} needs at least two waypoints")
        if self.label not in ROUTE_LABELS:
            raise ValueError(f"unknown route label {self.label!r}")
        for wp in self.waypoints:
            if abs(wp.z - self.leg_altitude) > 1e-9:
                raise ValueError(
                    f"route {self.id}: waypoint z={wp.z} differs from leg altitude {self.leg_altitude}"
                )

    def xy(self) -> np.ndarray:
        return np.array([[w.x, w.y] for w in self.waypoints], dtype=float)

    @property
    def length(self) -> float:
        return float(np.sum(np.hypot(*np.diff(self.xy(), axis=0).T)))

    def point_at(self, s: float) -> GeoPoint:
        """Point at arclength ``s`` along the horizontal polyline (clamped to the ends)."""
        xy = self.xy()
        seg = np.hypot(*np.diff(xy, axis=0).T)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        s = min(max(s, 0.0), cum[-1])
        i = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
        f = 0.0 if seg[i] == 0 else (s - cum[i]) / seg[i]
        x, y = xy[i] + f * (xy[i + 1] - xy[i])
        return GeoPoint(float(x), float(y), self.leg_altitude)


@dataclass(frozen=True)
class AntennaPattern:
    """Three-level azimuth-only pattern.

    Gain is ``main_gain`` within ``main_halfwidth`` of boresight, ``side_gain``
    out to ``side_sector`` and ``back_gain`` beyond. Azimuths are compass
    degrees (0 = north, 90 = east).
    """

    boresight_azimuth: float = 90.0
    main_gain: float = 15.0
    side_gain: float = 5.0
    back_gain: float = 0.0
    main_halfwidth: float = 60.0
    side_sector: float = 120.0

    def __post_init__(self):
        if not self.main_gain >= self.side_gain >= self.back_gain:
            raise ValueError("antenna gains must satisfy main >= side >= back")
        if not 0.0 < self.main_halfwidth < 180.0:
            raise ValueError("main_halfwidth must lie in (0, 180)")
        if self.side_sector < self.main_halfwidth:
            raise ValueError("side_sector must not be narrower than main_halfwidth")

    @classmethod
    def isotropic(cls, gain: float = 0.0) -> "AntennaPattern":
        return cls(0.0, gain, gain, gain, 90.0, 180.0)

    def gain(self, azimuth_offset) -> np.ndarray:
        """Gain in dBi for absolute azimuth offsets from boresight (degrees, 0..180)."""
        off = np.abs(np.asarray(azimuth_offset, dtype=float))
        return np.where(
            off <= self.main_halfwidth,
            self.main_gain,
            np.where(off <= self.side_sector, self.side_gain, self.back_gain),
        )


@dataclass(frozen=True)
class BuildingModel:
    """Box-shaped building with an east-wall window band and roof windows.

    ``footprint`` is ``(x_min, y_min, x_max, y_max)``; the east wall is the
    face at ``x_max``. ``window_spans`` are ``(y_lo, y_hi)`` intervals on that
    wall and the windows run the full wall height. ``interior_walls`` are
    full-height vertical 2D segments ``((x0, y0), (x1, y1))``.
    """

    footprint: tuple[float, float, float, float]
    height: float
    wall_loss: float = 20.0
    window_loss: float = 5.0
    window_spans: tuple[tuple[float, float], ...] = ()
    roof_windows: tuple[tuple[float, float, float, float], ...] = ()
    interior_wall_loss: float = 5.0
    max_interior_walls: int = 2
    interior_walls: tuple[tuple[tuple[float, float], tuple[float, float]], ...] = ()

    def __post_init__(self):
        x0, y0, x1, y1 = self.footprint
        if not (x1 > x0 and y1 > y0 and self.height > 0):
            raise ValueError("degenerate building footprint")
        if min(self.wall_loss, self.window_loss, self.interior_wall_loss) < 0:
            raise ValueError("losses must be non-negative")
        if self.window_loss > self.wall_loss:
            raise ValueError("window_loss must not exceed wall_loss")
        if not 0 <= self.max_interior_walls <= 2:
            raise ValueError("max_interior_walls must be 0, 1 or 2")
        for lo, hi in self.window_spans:
            if hi <= lo:
                raise ValueError(f"empty window span ({lo}, {hi})")

    def contains(self, p: GeoPoint) -> bool:
        x0, y0, x1, y1 = self.footprint
        return x0 < p.x < x1 and y0 < p.y < y1 and p.z < self.height


@dataclass(frozen=True)
class PathLossModel:
    """Log-distance model: loss(d) = intercept_a + 10 * exponent_n * log10(d / 1 m).

    ``intercept_a`` is the loss at the 1 m reference distance in dB, so the
    received level at 1 m on boresight is ``tx_power + gain - intercept_a``.
    """

    intercept_a: float
    exponent_n: float = 1.2
    sigma: float = 5.0
    censor_threshold: float = -140.0

    def __post_init__(self):
        if not self.exponent_n > 0:
            raise ValueError("exponent_n must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    def loss(self, d) -> np.ndarray:
        return self.intercept_a + 10.0 * self.exponent_n * np.log10(d)


@dataclass(frozen=True)
class RegulatoryLimit:
    kind: str
    value: float
    meas_bandwidth: float | None = None
    eval_height: float | None = None
    antenna_gain_assumed: float = 0.0
    unit: str = field(default="", compare=False)

    def __post_init__(self):
        if self.kind not in LIMIT_KINDS:
            raise ValueError(f"unknown limit kind {self.kind!r}")
        if self.kind != "inr" and not (self.meas_bandwidth and self.meas_bandwidth > 0):
            raise ValueError(f"{self.kind} limit needs a positive measurement bandwidth")


def distance_3d(p: GeoPoint, q: GeoPoint) -> float:
    return math.sqrt((p.x - q.x) ** 2 + (p.y - q.y) ** 2 + (p.z - q.z) ** 2)


def project_to_polyline(xy: np.ndarray, vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project 2D points onto a polyline.

    Args:
        xy: ``(N, 2)`` points.
        vertices: ``(M, 2)`` polyline vertices, ``M >= 2``.

    Returns:
        ``(distance, arclength)``: the horizontal distance from each point to
        the polyline and the arclength of its closest point.
    """
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    vertices = np.asarray(vertices, dtype=float)
    a = vertices[:-1]
    seg = vertices[1:] - a
    seg_len2 = np.einsum("ij,ij->i", seg, seg)
    cum = np.concatenate([[0.0], np.cumsum(np.sqrt(seg_len2))])

    rel = xy[:, None, :] - a[None, :, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.einsum("nmj,mj->nm", rel, seg) / seg_len2
    f = np.clip(np.nan_to_num(f, nan=0.0), 0.0, 1.0)
    closest = a[None, :, :] + f[..., None] * seg[None, :, :]
    dist = np.hypot(*(xy[:, None, :] - closest).transpose(2, 0, 1))
    k = np.argmin(dist, axis=1)
    rows = np.arange(len(xy))
    arclength = cum[k] + f[rows, k] * np.sqrt(seg_len2[k])
    return dist[rows, k], arclength


def point_to_polyline_distance(p: GeoPoint, r: Route | None) -> tuple[float, float]:
    """Horizontal distance to the route polyline and vertical offset from its leg altitude."""
    if r is None or len(r.waypoints) < 2:
        raise ValueError("empty route")
    h, _ = project_to_polyline(np.array([[p.x, p.y]]), r.xy())
    return float(h[0]), abs(p.z - r.leg_altitude)


def route_from_xy(route_id: int, xy: Sequence[Sequence[float]], altitude: float, label: str) -> Route:
    return Route(route_id, tuple(GeoPoint(float(x), float(y), altitude) for x, y in xy), altitude, label)
