"""Synthetic emission fields and virtual scanner/telemetry flights.

The received level at a point outside the building is

    rsrp = tx_power + antenna_gain - pathloss(d) - penetration + shadowing

where the shadowing term is a seeded Gaussian random field (in dB) that is
smooth in space, so two flights over the same route see the same values.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .model import (
    AntennaPattern,
    BuildingModel,
    GeoPoint,
    PathLossModel,
    Route,
    Sample,
    TelemetryPoint,
    Z_TOLERANCE,
)

TELEMETRY_RATE_HZ = 10.0
RSRP_REPORT_FLOOR = -200.0

# Derived scanner metrics assume a fully loaded 100 MHz carrier at 30 kHz SCS.
_N_RB = 273
_NOISE_PER_RE_DBM = -174.0 + 10.0 * math.log10(30e3) + 7.0

Extent = tuple[tuple[float, float], tuple[float, float], tuple[float, float]]


class ShadowField:
    """Stationary Gaussian random field on a regular 3D grid.

    White noise on a grid of spacing ``resolution`` is smoothed with a
    separable Gaussian kernel whose standard deviation is half the
    ``corr_length``, so the field correlation falls to 1/e at
    ``corr_length``. Off-grid values are trilinearly interpolated and
    rescaled so that the marginal standard deviation is exactly ``sigma``
    everywhere, not only on grid nodes.
    """

    def __init__(self, seed: int, sigma: float, corr_length: float, extent: Extent, resolution: float = 1.0):
        self.sigma = float(sigma)
        self.resolution = float(resolution)
        self.lo = np.array([e[0] for e in extent], dtype=float)
        hi = np.array([e[1] for e in extent], dtype=float)
        if np.any(hi <= self.lo):
            raise ValueError(f"degenerate shadowing extent {extent}")
        self.shape = tuple(int(n) for n in np.ceil((hi - self.lo) / resolution).astype(int) + 1)
        self.hi = self.lo + (np.array(self.shape) - 1) * resolution

        s = corr_length / (2.0 * resolution)
        if s > 0:
            r = max(1, int(4.0 * s + 0.5))
            x = np.arange(-r, r + 1, dtype=float)
            kernel = np.exp(-0.5 * (x / s) ** 2)
        else:
            r, kernel = 0, np.ones(1)
        kernel /= np.sqrt(np.sum(kernel**2))
        self.lag1_corr = float(np.sum(kernel[:-1] * kernel[1:]))

        rng = np.random.default_rng(seed)
        grid = rng.standard_normal(tuple(n + 2 * r for n in self.shape))
        for axis in range(3):
            grid = ndimage.correlate1d(grid, kernel, axis=axis, mode="constant")
            if r:
                grid = np.take(grid, np.arange(r, r + self.shape[axis]), axis=axis)
        self.grid = grid

    def __call__(self, xyz: np.ndarray) -> np.ndarray:
        xyz = np.atleast_2d(np.asarray(xyz, dtype=float))
        if self.sigma == 0:
            return np.zeros(len(xyz))
        if np.any(xyz < self.lo - 1e-9) or np.any(xyz > self.hi + 1e-9):
            raise ValueError("point outside the shadowing extent; enlarge shadow_extent")
        g = (xyz - self.lo) / self.resolution
        i = np.clip(np.floor(g).astype(int), 0, np.array(self.shape) - 2)
        f = g - i

        out = np.zeros(len(xyz))
        for dx in (0, 1):
            wx = f[:, 0] if dx else 1 - f[:, 0]
            for dy in (0, 1):
                wy = f[:, 1] if dy else 1 - f[:, 1]
                for dz in (0, 1):
                    wz = f[:, 2] if dz else 1 - f[:, 2]
                    out += wx * wy * wz * self.grid[i[:, 0] + dx, i[:, 1] + dy, i[:, 2] + dz]
        rho = self.lag1_corr
        var = np.prod((1 - f) ** 2 + f**2 + 2 * f * (1 - f) * rho, axis=1)
        return self.sigma * out / np.sqrt(var)


@functools.lru_cache(maxsize=4)
def _shadow_field(seed, sigma, corr_length, extent, resolution) -> ShadowField:
    return ShadowField(seed, sigma, corr_length, extent, resolution)


@dataclass(frozen=True)
class EmissionScenario:
    bs_pos: GeoPoint
    pathloss: PathLossModel
    tx_power: float = 33.0
    carrier: float = 3.55e9
    antenna: AntennaPattern = field(default_factory=AntennaPattern)
    building: BuildingModel | None = None
    shadow_seed: int = 0
    shadow_corr_length: float = 5.0
    shadow_extent: Extent = ((-150.0, 150.0), (-150.0, 150.0), (0.0, 40.0))
    shadow_resolution: float = 1.0

    def __post_init__(self):
        if not self.carrier > 0:
            raise ValueError("carrier must be positive")
        if self.tx_power > 50.0:
            raise ValueError("tx_power above 50 dBm")
        if self.building is not None and not self.building.contains(self.bs_pos):
            raise ValueError("base station must sit inside the building")
        object.__setattr__(
            self, "shadow_extent", tuple(tuple(float(v) for v in ax) for ax in self.shadow_extent)
        )

    def shadow(self) -> ShadowField:
        return _shadow_field(
            self.shadow_seed,
            self.pathloss.sigma,
            self.shadow_corr_length,
            self.shadow_extent,
            self.shadow_resolution,
        )


@dataclass(frozen=True)
class ScannerProfile:
    sample_rate: float = 5.0
    sensitivity: float = -140.0
    gps_alt_noise_sigma: float = 0.0
    gps_horiz_noise_sigma: float = 0.0
    clock_offset: float = 0.0
    below_floor_policy: str = "drop"

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        if self.gps_alt_noise_sigma < 0 or self.gps_horiz_noise_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")
        if self.below_floor_policy not in ("drop", "clamp"):
            raise ValueError(f"unknown below_floor_policy {self.below_floor_policy!r}")


def azimuth_offset(antenna: AntennaPattern, bs: GeoPoint, xyz: np.ndarray) -> np.ndarray:
    """Absolute compass-azimuth offset from boresight in degrees; 0 straight above the BS."""
    dx = xyz[:, 0] - bs.x
    dy = xyz[:, 1] - bs.y
    az = np.degrees(np.arctan2(dx, dy))
    off = np.abs((az - antenna.boresight_azimuth + 180.0) % 360.0 - 180.0)
    return np.where(np.hypot(dx, dy) < 1e-9, 0.0, off)


def _in_intervals(v: np.ndarray, intervals) -> np.ndarray:
    hit = np.zeros(v.shape, dtype=bool)
    for lo, hi in intervals:
        hit |= (v >= lo) & (v <= hi)
    return hit


def penetration_loss(building: BuildingModel | None, bs: GeoPoint, xyz: np.ndarray) -> np.ndarray:
    """Loss in dB along the straight ray from ``bs`` to each point in ``xyz``.

    One exterior crossing (wall, east-wall window, roof or roof window) plus
    interior walls crossed, capped at ``max_interior_walls``.
    """
    xyz = np.atleast_2d(np.asarray(xyz, dtype=float))
    if building is None:
        return np.zeros(len(xyz))
    b = np.array([bs.x, bs.y, bs.z])
    d = xyz - b
    x0, y0, x1, y1 = building.footprint
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(d[:, 0] > 0, (x1 - b[0]) / d[:, 0], np.where(d[:, 0] < 0, (x0 - b[0]) / d[:, 0], np.inf))
        ty = np.where(d[:, 1] > 0, (y1 - b[1]) / d[:, 1], np.where(d[:, 1] < 0, (y0 - b[1]) / d[:, 1], np.inf))
        tz = np.where(d[:, 2] > 0, (building.height - b[2]) / d[:, 2], np.inf)
    t = np.stack([tx, ty, tz], axis=1)
    face = np.argmin(t, axis=1)
    t_exit = t[np.arange(len(xyz)), face]
    if np.any(t_exit >= 1.0):
        raise ValueError("point lies inside the building footprint below the roof")
    exit_pt = b + t_exit[:, None] * d

    through_window = np.zeros(len(xyz), dtype=bool)
    roof = face == 2
    if building.roof_windows:
        in_roof_window = np.zeros(len(xyz), dtype=bool)
        for rx0, ry0, rx1, ry1 in building.roof_windows:
            in_roof_window |= (
                (exit_pt[:, 0] >= rx0) & (exit_pt[:, 0] <= rx1) & (exit_pt[:, 1] >= ry0) & (exit_pt[:, 1] <= ry1)
            )
        through_window |= roof & in_roof_window
    east = (face == 0) & (d[:, 0] > 0)
    through_window |= east & _in_intervals(exit_pt[:, 1], building.window_spans)
    loss = np.where(through_window, building.window_loss, building.wall_loss)

    crossings = np.zeros(len(xyz), dtype=int)
    for (ax, ay), (cx, cy) in building.interior_walls:
        ex, ey = cx - ax, cy - ay
        denom = d[:, 0] * ey - d[:, 1] * ex
        with np.errstate(divide="ignore", invalid="ignore"):
            tt = ((ax - b[0]) * ey - (ay - b[1]) * ex) / denom
            uu = ((ax - b[0]) * d[:, 1] - (ay - b[1]) * d[:, 0]) / denom
        crossings += (denom != 0) & (tt > 0) & (tt < t_exit) & (uu >= 0) & (uu <= 1)
    crossings = np.minimum(crossings, building.max_interior_walls)
    return loss + building.interior_wall_loss * crossings


def true_rsrp_many(scn: EmissionScenario, xyz: np.ndarray, shadowing: bool = True) -> np.ndarray:
    xyz = np.atleast_2d(np.asarray(xyz, dtype=float))
    bs = scn.bs_pos
    d = np.linalg.norm(xyz - bs.as_array(), axis=1)
    if np.any(d <= 0):
        raise ValueError("point coincides with the base station")
    gain = scn.antenna.gain(azimuth_offset(scn.antenna, bs, xyz))
    rsrp = scn.tx_power + gain - scn.pathloss.loss(d) - penetration_loss(scn.building, bs, xyz)
    if shadowing and scn.pathloss.sigma > 0:
        rsrp = rsrp + scn.shadow()(xyz)
    return rsrp


def true_rsrp(scn: EmissionScenario, p: GeoPoint) -> float:
    return float(true_rsrp_many(scn, p.as_array()[None, :])[0])


def _make_samples(times, xyz_reported, rsrp, prof: ScannerProfile) -> list[Sample]:
    out = []
    for t, (x, y, z), level in zip(times, xyz_reported, rsrp):
        if level < RSRP_REPORT_FLOOR:
            continue
        if level < prof.sensitivity:
            if prof.below_floor_policy == "drop":
                continue
            level = prof.sensitivity
        level = min(float(level), 0.0)
        out.append(
            Sample(
                t=float(t),
                pos=GeoPoint(float(x), float(y), max(float(z), -Z_TOLERANCE)),
                rsrp=level,
                sinr=level - _NOISE_PER_RE_DBM,
                rssi=level + 10.0 * math.log10(12 * _N_RB),
            )
        )
    return out


def sample_points(scn: EmissionScenario, prof: ScannerProfile, xyz: np.ndarray, t0: float = 0.0) -> list[Sample]:
    """Noise-free stationary scanner readings at arbitrary points, censored per ``prof``."""
    xyz = np.atleast_2d(np.asarray(xyz, dtype=float))
    times = t0 + np.arange(len(xyz)) / prof.sample_rate
    return _make_samples(times, xyz, true_rsrp_many(scn, xyz), prof)


def trajectory(route: Route, speed: float, times: np.ndarray) -> np.ndarray:
    """True ``(N, 3)`` drone positions at ``times`` for a constant-speed traversal starting at t=0."""
    xy = route.xy()
    seg = np.hypot(*np.diff(xy, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = np.clip(np.asarray(times, dtype=float) * speed, 0.0, cum[-1])
    x = np.interp(s, cum, xy[:, 0])
    y = np.interp(s, cum, xy[:, 1])
    return np.column_stack([x, y, np.full(len(s), route.leg_altitude)])


def fly(
    scn: EmissionScenario,
    prof: ScannerProfile,
    route: Route,
    speed: float,
    seed: int = 0,
) -> tuple[list[Sample], list[TelemetryPoint]]:
    """Fly ``route`` once at constant ``speed`` and return (scanner log, telemetry log).

    Telemetry is logged at 10 Hz with exact position and barometric altitude.
    The scanner logs ``true_rsrp`` at ``prof.sample_rate`` with GPS noise on
    its reported position and timestamps shifted by ``prof.clock_offset``.
    Levels below ``RSRP_REPORT_FLOOR`` are never reported.
    """
    if not speed > 0:
        raise ValueError("speed must be positive")
    length = route.length
    if length <= 0:
        raise ValueError(f"route {route.id} is degenerate")
    duration = length / speed
    rng = np.random.default_rng(seed)

    t_tel = np.arange(int(math.floor(duration * TELEMETRY_RATE_HZ + 1e-9)) + 1) / TELEMETRY_RATE_HZ
    tel_xyz = trajectory(route, speed, t_tel)
    telemetry = [TelemetryPoint(float(t), float(x), float(y), float(z)) for t, (x, y, z) in zip(t_tel, tel_xyz)]

    t_scan = np.arange(int(math.floor(duration * prof.sample_rate + 1e-9)) + 1) / prof.sample_rate
    true_xyz = trajectory(route, speed, t_scan)
    rsrp = true_rsrp_many(scn, true_xyz)
    noise = rng.standard_normal(true_xyz.shape) * np.array(
        [prof.gps_horiz_noise_sigma, prof.gps_horiz_noise_sigma, prof.gps_alt_noise_sigma]
    )
    samples = _make_samples(t_scan + prof.clock_offset, true_xyz + noise, rsrp, prof)
    return samples, telemetry
