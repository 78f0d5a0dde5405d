"""Waypoint routes for the main-lobe, side-lobe and over-roof test cases."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import AntennaPattern, BuildingModel, GeoPoint, Route, route_from_xy


@dataclass(frozen=True)
class CampaignPlan:
    routes: tuple[Route, ...]
    heights_main: tuple[float, ...] = (2.0, 4.0, 6.0, 8.0, 10.0, 12.0)
    height_side: float = 5.0
    height_roof: float = 18.0
    repeats: int = 2
    origin: tuple[float, float, float] | None = None  # (lat, lon, alt) of the local frame
    bs_pos: GeoPoint = field(default_factory=lambda: GeoPoint(0.0, 0.0, 0.0))

    def __post_init__(self):
        object.__setattr__(self, "routes", tuple(self.routes))
        if any(b <= a for a, b in zip(self.heights_main, self.heights_main[1:])):
            raise ValueError("heights_main must be strictly increasing")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")


def _unit(azimuth_deg: float) -> np.ndarray:
    a = math.radians(azimuth_deg)
    # Rounding keeps cardinal directions exact (sin(pi) is 1.2e-16, not 0).
    return np.round(np.array([math.sin(a), math.cos(a)]), 12) + 0.0


def _footprint_exit(building: BuildingModel, origin: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Point where a horizontal ray from inside the footprint leaves it."""
    x0, y0, x1, y1 = building.footprint
    ts = []
    for k, (lo, hi) in enumerate(((x0, x1), (y0, y1))):
        if direction[k] > 0:
            ts.append((hi - origin[k]) / direction[k])
        elif direction[k] < 0:
            ts.append((lo - origin[k]) / direction[k])
    t = min(ts)
    if t < 0:
        raise ValueError("base station lies outside the building footprint")
    return origin + t * direction


def _segment_hits_rect(p: np.ndarray, q: np.ndarray, rect: tuple[float, float, float, float]) -> bool:
    """Liang-Barsky clip of segment pq against an axis-aligned rectangle."""
    x0, y0, x1, y1 = rect
    d = q - p
    t0, t1 = 0.0, 1.0
    for pk, qk in ((-d[0], p[0] - x0), (d[0], x1 - p[0]), (-d[1], p[1] - y0), (d[1], y1 - p[1])):
        if pk == 0:
            if qk < 0:
                return False
            continue
        r = qk / pk
        if pk < 0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 > t1:
            return False
    return True


def _perpendicular_routes(
    building: BuildingModel,
    ray_azimuth: float,
    bs_xy: Sequence[float],
    heights: Sequence[float],
    standoff: float,
    length: float,
    route_id: int,
    label: str,
) -> list[Route]:
    if not standoff > 0:
        raise ValueError("standoff must be positive")
    if not length > 0:
        raise ValueError("length must be positive")
    if len(heights) == 0:
        raise ValueError("at least one height is required")
    bs_xy = np.asarray(bs_xy, dtype=float)
    u = _unit(ray_azimuth)
    center = _footprint_exit(building, bs_xy, u) + standoff * u
    perp = np.array([u[1], -u[0]])
    a = center + 0.5 * length * perp
    b = center - 0.5 * length * perp
    # Start at the end with the larger northing (or easting) so the order is stable.
    start, end = (a, b) if (a[1], a[0]) >= (b[1], b[0]) else (b, a)
    if _segment_hits_rect(start, end, building.footprint):
        raise ValueError("route intersects the building footprint")
    return [route_from_xy(route_id, [start, end], float(h), label) for h in heights]


def plan_main_lobe(
    building: BuildingModel,
    antenna: AntennaPattern,
    heights: Sequence[float],
    standoff: float,
    length: float,
    bs_xy: Sequence[float] = (0.0, 0.0),
    route_id: int = 2,
) -> list[Route]:
    """One straight pass per height, orthogonal to boresight, centered on the boresight ray.

    The pass sits ``standoff`` meters beyond the point where boresight leaves
    the footprint. All heights share identical start and end coordinates.
    """
    return _perpendicular_routes(
        building, antenna.boresight_azimuth, bs_xy, heights, standoff, length, route_id, "main_lobe"
    )


def plan_side_lobe(
    building: BuildingModel,
    antenna: AntennaPattern,
    height: float,
    standoff: float,
    length: float,
    bs_xy: Sequence[float] = (0.0, 0.0),
    route_id: int = 3,
    override_tail: float = 0.0,
) -> Route:
    """Main-lobe geometry rotated 90 degrees clockwise (due south for an east-facing antenna).

    ``override_tail`` meters at the end of the pass are flown manually and are
    left out of the automated route.
    """
    (route,) = _perpendicular_routes(
        building, antenna.boresight_azimuth + 90.0, bs_xy, [height], standoff, length, route_id, "side_lobe"
    )
    if override_tail > 0:
        route = truncate_for_terrain(route, [(route.length - override_tail, route.length)])
    return route


def truncate_for_terrain(r: Route, terrain_clearance_mask: Sequence[tuple[float, float]], route_id: int | None = None) -> Route:
    """Clip ``r`` to the longest prefix that avoids every masked arclength interval."""
    total = r.length
    cut = total
    for lo, hi in terrain_clearance_mask:
        if lo > hi or lo < -1e-9 or hi > total + 1e-9:
            raise ValueError(f"mask interval ({lo}, {hi}) outside route arclength [0, {total}]")
        cut = min(cut, max(lo, 0.0))
    if cut <= 0:
        raise ValueError(f"route {r.id} is fully masked")
    new_id = r.id if route_id is None else route_id
    if cut >= total:
        return Route(new_id, r.waypoints, r.leg_altitude, r.label)

    xy = r.xy()
    cum = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(xy, axis=0).T))])
    kept = [tuple(p) for p, s in zip(xy, cum) if s < cut]
    end = r.point_at(cut)
    kept.append((end.x, end.y))
    return route_from_xy(new_id, kept, r.leg_altitude, r.label)


def plan_roof(
    building: BuildingModel,
    antenna: AntennaPattern,
    height: float,
    n_passes: int,
    bs_xy: Sequence[float] = (0.0, 0.0),
    margin: float = 10.0,
    spacing: float = 6.0,
    first_id: int = 4,
) -> list[Route]:
    """Parallel passes over the roof, aligned with boresight, centered on the BS line."""
    if height <= building.height:
        raise ValueError(f"roof pass at {height} m is not above the roof ({building.height} m)")
    if n_passes < 1:
        raise ValueError("n_passes must be at least 1")
    u = _unit(antenna.boresight_azimuth)
    perp = np.array([u[1], -u[0]])
    bs_xy = np.asarray(bs_xy, dtype=float)
    x0, y0, x1, y1 = building.footprint
    corners = np.array([[x0, y0], [x0, y1], [x1, y0], [x1, y1]]) - bs_xy
    along = corners @ u
    s_lo, s_hi = along.min() - margin, along.max() + margin

    routes = []
    for k in range(n_passes):
        offset = (k - (n_passes - 1) / 2.0) * spacing
        base = bs_xy + offset * perp
        # Fly from behind the antenna toward boresight (west to east for an east-facing BS).
        routes.append(
            route_from_xy(first_id + k, [base + s_lo * u, base + s_hi * u], float(height), "back_lobe")
        )
    return routes


def plan_to_json(plan: CampaignPlan) -> str:
    doc = {
        "origin": list(plan.origin) if plan.origin is not None else None,
        "bs_pos": [plan.bs_pos.x, plan.bs_pos.y, plan.bs_pos.z],
        "heights_main": list(plan.heights_main),
        "height_side": plan.height_side,
        "height_roof": plan.height_roof,
        "repeats": plan.repeats,
        "routes": [
            {
                "id": r.id,
                "label": r.label,
                "altitude_m": r.leg_altitude,
                "waypoints": [[w.x, w.y, w.z] for w in r.waypoints],
            }
            for r in plan.routes
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def plan_from_json(text: str) -> CampaignPlan:
    doc = json.loads(text)
    try:
        routes = [
            Route(
                int(r["id"]),
                tuple(GeoPoint(*map(float, w)) for w in r["waypoints"]),
                float(r["altitude_m"]),
                r["label"],
            )
            for r in doc["routes"]
        ]
        return CampaignPlan(
            routes=tuple(routes),
            heights_main=tuple(doc.get("heights_main", ())),
            height_side=float(doc.get("height_side", 5.0)),
            height_roof=float(doc.get("height_roof", 18.0)),
            repeats=int(doc.get("repeats", 1)),
            origin=tuple(doc["origin"]) if doc.get("origin") is not None else None,
            bs_pos=GeoPoint(*map(float, doc.get("bs_pos", (0.0, 0.0, 0.0)))),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed plan document: {exc}") from exc
