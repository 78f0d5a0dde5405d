"""Scanner/telemetry log ingestion and fusion.

Scanner GPS altitude is unreliable, so each scanner record is matched in time
to the drone telemetry (after removing the clock offset between the two
devices) and takes its altitude from the drone's barometric estimate. Records
that are not on any planned route are discarded.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .model import GeoPoint, Route, Sample, TelemetryPoint, Z_TOLERANCE, project_to_polyline

logger = logging.getLogger(__name__)

SCANNER_HEADER = ["time_s", "lat_deg", "lon_deg", "alt_m", "rsrp_dbm", "rsrq_db", "sinr_db", "rssi_dbm"]
TELEMETRY_HEADER = ["time_s", "lat_deg", "lon_deg", "alt_baro_m"]
FUSED_HEADER = [
    "time_s", "x_m", "y_m", "z_m", "route_id", "dist_bs_m", "rsrp_dbm",
    "rsrq_db", "sinr_db", "rssi_dbm", "route_alt_m",
]

# WGS84
_A = 6378137.0
_E2 = 6.69437999014e-3


class LogFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LocalFrame:
    """Equirectangular tangent frame about ``(lat0, lon0)``.

    Northing uses the meridional radius of curvature at the origin and easting
    the prime-vertical radius scaled by the cosine of the mean latitude of
    the point and origin. Horizontal distances agree with WGS84 geodesics to
    well under 1 cm over 1 km.
    """

    lat0: float
    lon0: float
    alt0: float = 0.0

    @property
    def _radii(self) -> tuple[float, float]:
        s = math.sin(math.radians(self.lat0))
        w = math.sqrt(1.0 - _E2 * s * s)
        return _A * (1.0 - _E2) / w**3, _A / w

    def to_local(self, lat, lon, alt=None):
        m, n = self._radii
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        mean_lat = np.radians(0.5 * (lat + self.lat0))
        y = m * np.radians(lat - self.lat0)
        x = n * np.cos(mean_lat) * np.radians(lon - self.lon0)
        if alt is None:
            return x, y
        return x, y, np.asarray(alt, dtype=float) - self.alt0

    def to_geodetic(self, x, y, z=None):
        m, n = self._radii
        lat = self.lat0 + np.degrees(np.asarray(y, dtype=float) / m)
        mean_lat = np.radians(0.5 * (lat + self.lat0))
        lon = self.lon0 + np.degrees(np.asarray(x, dtype=float) / (n * np.cos(mean_lat)))
        if z is None:
            return lat, lon
        return lat, lon, np.asarray(z, dtype=float) + self.alt0


@dataclass(frozen=True)
class FusedSample:
    t: float
    pos: GeoPoint
    rsrp: float
    route_id: int
    distance_to_bs: float
    rsrq: float | None = None
    sinr: float | None = None
    rssi: float | None = None
    route_altitude: float | None = None

    def __post_init__(self):
        if not self.distance_to_bs > 0:
            raise ValueError("distance_to_bs must be positive")

    def as_sample(self) -> Sample:
        return Sample(self.t, self.pos, self.rsrp, self.rsrq, self.sinr, self.rssi)


@dataclass(frozen=True)
class FusionConfig:
    time_tolerance: float = 0.5
    horiz_gate: float = 3.0
    vert_gate: float = 1.5
    offset_search_window: float = 10.0
    offset_resolution: float = 0.05
    replace_horizontal: bool = False

    def __post_init__(self):
        for name in ("time_tolerance", "horiz_gate", "vert_gate", "offset_search_window", "offset_resolution"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


# -- CSV -------------------------------------------------------------------

def _number(text: str, column: str, line: int, optional: bool = False) -> float | None:
    text = text.strip()
    if text == "":
        if optional:
            return None
        raise LogFormatError(f"line {line}: missing value for {column}")
    try:
        value = float(text)
    except ValueError:
        raise LogFormatError(f"line {line}: {column}={text!r} is not a number") from None
    if not math.isfinite(value):
        raise LogFormatError(f"line {line}: {column}={text!r} is not finite")
    return value


def _rows(text: str, header: list[str], kind: str) -> Iterable[tuple[int, list[str]]]:
    reader = csv.reader(io.StringIO(text))
    try:
        found = [h.strip() for h in next(reader)]
    except StopIteration:
        raise LogFormatError(f"{kind} CSV is empty (no header row)") from None
    if found != header:
        raise LogFormatError(
            f"{kind} CSV header mismatch: expected {','.join(header)!r}, got {','.join(found)!r}"
        )
    for row in reader:
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise LogFormatError(
                f"line {reader.line_num}: expected {len(header)} fields, got {len(row)}"
            )
        yield reader.line_num, row


def parse_scanner_csv(text: str, frame: LocalFrame) -> list[Sample]:
    out = []
    for line, row in _rows(text, SCANNER_HEADER, "scanner"):
        t, lat, lon, alt, rsrp = (_number(v, c, line) for v, c in zip(row[:5], SCANNER_HEADER))
        rsrq, sinr, rssi = (_number(v, c, line, optional=True) for v, c in zip(row[5:], SCANNER_HEADER[5:]))
        x, y, z = frame.to_local(lat, lon, alt)
        try:
            out.append(Sample(t, GeoPoint(float(x), float(y), max(float(z), -Z_TOLERANCE)), rsrp, rsrq, sinr, rssi))
        except ValueError as exc:
            raise LogFormatError(f"line {line}: {exc}") from None
    return out


def parse_telemetry_csv(text: str, frame: LocalFrame) -> list[TelemetryPoint]:
    out = []
    for line, row in _rows(text, TELEMETRY_HEADER, "telemetry"):
        t, lat, lon, alt = (_number(v, c, line) for v, c in zip(row, TELEMETRY_HEADER))
        if out and t < out[-1].t:
            raise LogFormatError(f"line {line}: telemetry time {t} goes backwards")
        x, y = frame.to_local(lat, lon)
        out.append(TelemetryPoint(t, float(x), float(y), alt))
    return out


def _fmt(v: float | None, digits: int) -> str:
    return "" if v is None else f"{v:.{digits}f}"


def write_scanner_csv(samples: Sequence[Sample], frame: LocalFrame) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCANNER_HEADER)
    for s in samples:
        lat, lon, alt = frame.to_geodetic(s.pos.x, s.pos.y, s.pos.z)
        w.writerow([
            f"{s.t:.3f}", f"{lat:.9f}", f"{lon:.9f}", f"{alt:.3f}",
            f"{s.rsrp:.2f}", _fmt(s.rsrq, 2), _fmt(s.sinr, 2), _fmt(s.rssi, 2),
        ])
    return buf.getvalue()


def write_telemetry_csv(tel: Sequence[TelemetryPoint], frame: LocalFrame) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TELEMETRY_HEADER)
    for p in tel:
        lat, lon = frame.to_geodetic(p.x, p.y)
        w.writerow([f"{p.t:.3f}", f"{lat:.9f}", f"{lon:.9f}", f"{p.alt_baro:.3f}"])
    return buf.getvalue()


def write_fused_csv(samples: Sequence[FusedSample]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FUSED_HEADER)
    for s in samples:
        w.writerow([
            f"{s.t:.3f}", f"{s.pos.x:.4f}", f"{s.pos.y:.4f}", f"{s.pos.z:.4f}", s.route_id,
            f"{s.distance_to_bs:.4f}", f"{s.rsrp:.2f}", _fmt(s.rsrq, 2), _fmt(s.sinr, 2),
            _fmt(s.rssi, 2), _fmt(s.route_altitude, 3),
        ])
    return buf.getvalue()


def parse_fused_csv(text: str) -> list[FusedSample]:
    out = []
    for line, row in _rows(text, FUSED_HEADER, "fused"):
        t, x, y, z, rid, dist, rsrp = (_number(v, c, line) for v, c in zip(row[:7], FUSED_HEADER))
        rsrq, sinr, rssi, alt = (_number(v, c, line, optional=True) for v, c in zip(row[7:], FUSED_HEADER[7:]))
        try:
            out.append(FusedSample(t, GeoPoint(x, y, z), rsrp, int(rid), dist, rsrq, sinr, rssi, alt))
        except ValueError as exc:
            raise LogFormatError(f"line {line}: {exc}") from None
    return out


# -- synchronisation -------------------------------------------------------

def _telemetry_arrays(tel: Sequence[TelemetryPoint]) -> tuple[np.ndarray, ...]:
    if not tel:
        raise ValueError("empty telemetry log")
    arr = np.array([(p.t, p.x, p.y, p.alt_baro) for p in tel], dtype=float)
    if np.any(np.diff(arr[:, 0]) < 0):
        raise ValueError("telemetry time is not monotonic")
    return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]


def estimate_clock_offset(scan: Sequence[Sample], tel: Sequence[TelemetryPoint], cfg: FusionConfig = FusionConfig()) -> float:
    """Scanner-minus-drone clock offset found by trajectory alignment.

    Each candidate offset on a ``cfg.offset_resolution`` grid inside the
    search window shifts the scanner timestamps back onto the drone clock;
    the winner minimises the mean horizontal distance between scanner fixes
    and the piecewise-linear telemetry track. Candidates that leave fewer
    than half the scanner records inside the telemetry span are skipped.
    """
    if len(scan) < 2:
        raise ValueError("need at least two scanner records to estimate a clock offset")
    T, X, Y, _ = _telemetry_arrays(tel)
    s_t = np.array([s.t for s in scan])
    s_xy = np.array([(s.pos.x, s.pos.y) for s in scan])
    if T[-1] - T[0] < 5.0 or s_t.max() - s_t.min() < 5.0:
        raise ValueError("logs must span at least 5 s to estimate a clock offset")
    if np.hypot(X.max() - X.min(), Y.max() - Y.min()) < 1.0:
        raise ValueError("offset unobservable: telemetry shows no horizontal motion")

    w, res = cfg.offset_search_window, cfg.offset_resolution
    k = int(round(w / res))
    candidates = np.arange(-k, k + 1) * res
    best, best_cost = None, math.inf
    for delta in candidates:
        t = s_t - delta
        inside = (t >= T[0]) & (t <= T[-1])
        if inside.sum() < max(2, len(s_t) / 2):
            continue
        px = np.interp(t[inside], T, X)
        py = np.interp(t[inside], T, Y)
        cost = float(np.mean(np.hypot(px - s_xy[inside, 0], py - s_xy[inside, 1])))
        if cost < best_cost - 1e-12:
            best, best_cost = float(delta), cost
    if best is None:
        raise ValueError("logs do not overlap for any offset in the search window")
    logger.debug("clock offset %.2f s (mean misfit %.3f m)", best, best_cost)
    return round(best, 10)


def fuse(
    scan: Sequence[Sample],
    tel: Sequence[TelemetryPoint],
    routes: Sequence[Route],
    cfg: FusionConfig = FusionConfig(),
    bs_pos: GeoPoint = GeoPoint(0.0, 0.0, 0.0),
    offset: float | None = None,
) -> list[FusedSample]:
    """Join scanner records with telemetry and keep those on a planned route.

    When ``offset`` is None it is estimated with :func:`estimate_clock_offset`.
    """
    if not scan:
        return []
    if not routes:
        raise ValueError("no routes to gate against")
    if offset is None:
        offset = estimate_clock_offset(scan, tel, cfg)
    T, X, Y, Z = _telemetry_arrays(tel)
    tol = cfg.time_tolerance

    t = np.array([s.t for s in scan]) - offset
    right = np.searchsorted(T, t, side="right")
    left = right - 1
    has_l = left >= 0
    has_r = right < len(T)
    li = np.clip(left, 0, len(T) - 1)
    ri = np.clip(right, 0, len(T) - 1)
    dl = np.where(has_l, t - T[li], np.inf)
    dr = np.where(has_r, T[ri] - t, np.inf)

    bracket = (dl <= tol) & (dr <= tol)
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(bracket, dl / (dl + dr), 0.0)
    f = np.nan_to_num(f)
    nearest = np.where(dl <= dr, li, ri)
    matched = bracket | (np.minimum(dl, dr) <= tol)
    if matched.sum() * 2 < len(scan):
        raise ValueError(
            f"logs do not overlap: only {int(matched.sum())} of {len(scan)} scanner records have telemetry within {tol} s"
        )

    def pick(v):
        return np.where(bracket, v[li] + f * (v[ri] - v[li]), v[nearest])

    z = pick(Z)
    if cfg.replace_horizontal:
        x, y = pick(X), pick(Y)
    else:
        x = np.array([s.pos.x for s in scan])
        y = np.array([s.pos.y for s in scan])

    xy = np.column_stack([x, y])
    h = np.empty((len(routes), len(scan)))
    v = np.empty((len(routes), len(scan)))
    for k, r in enumerate(routes):
        h[k], _ = project_to_polyline(xy, r.xy())
        v[k] = np.abs(z - r.leg_altitude)

    out = []
    bs = bs_pos.as_array()
    for i, s in enumerate(scan):
        if not matched[i]:
            continue
        ok = [k for k in range(len(routes)) if h[k, i] <= cfg.horiz_gate and v[k, i] <= cfg.vert_gate]
        if not ok:
            continue
        k = min(ok, key=lambda k: (h[k, i], v[k, i], routes[k].id, k))
        pos = GeoPoint(float(x[i]), float(y[i]), max(float(z[i]), -Z_TOLERANCE))
        dist = float(np.linalg.norm(pos.as_array() - bs))
        if dist <= 0:
            continue
        out.append(
            FusedSample(
                t=float(t[i]), pos=pos, rsrp=s.rsrp, route_id=routes[k].id, distance_to_bs=dist,
                rsrq=s.rsrq, sinr=s.sinr, rssi=s.rssi, route_altitude=routes[k].leg_altitude,
            )
        )
    return out
