"""Heatmaps, per-flight empirical CDFs and the truncated path-loss regression family."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np
from scipy import stats
from scipy.spatial import cKDTree

from .fuse import FusedSample, LocalFrame
from .model import Route, project_to_polyline

THREE_SIGMA_MASS = math.erf(3.0 / math.sqrt(2.0))  # 0.9973
MIN_FIT_POINTS = 10


# -- heatmap ---------------------------------------------------------------

@dataclass(frozen=True)
class HeatmapGrid:
    """RSRP on a regular (arclength, altitude) grid; NaN marks empty cells."""

    u_centers: np.ndarray
    v_centers: np.ndarray
    cells: np.ndarray  # shape (len(v_centers), len(u_centers)), dBm
    route: Route

    def to_csv(self) -> str:
        lines = ["v_m\\u_m," + ",".join(f"{u:.3f}" for u in self.u_centers)]
        for v, row in zip(self.v_centers, self.cells):
            lines.append(f"{v:.3f}," + ",".join("" if np.isnan(c) else f"{c:.2f}" for c in row))
        return "\n".join(lines) + "\n"

    def to_geojson(self, frame: LocalFrame) -> str:
        features = []
        for j, v in enumerate(self.v_centers):
            for i, u in enumerate(self.u_centers):
                c = self.cells[j, i]
                if np.isnan(c):
                    continue
                p = self.route.point_at(float(u))
                lat, lon, alt = frame.to_geodetic(p.x, p.y, float(v))
                features.append({
                    "type": "Feature",
                    "geometry": {"type": "Point", "coordinates": [round(float(lon), 9), round(float(lat), 9), round(float(alt), 3)]},
                    "properties": {"rsrp_dbm": round(float(c), 2), "u_m": round(float(u), 3), "v_m": round(float(v), 3), "route_id": self.route.id},
                })
        return json.dumps({"type": "FeatureCollection", "features": features}, indent=1) + "\n"


def heatmap(
    samples: Sequence[FusedSample],
    route: Route,
    cell: float = 1.0,
    radius: float = 2.0,
    power: float = 2.0,
    space: str = "linear",
) -> HeatmapGrid:
    """Inverse-distance-weighted RSRP over the (arclength along ``route``, altitude) plane.

    Averaging happens in milliwatts when ``space="linear"`` and directly in
    dB when ``space="db"``. Cells with no sample within ``radius`` stay empty;
    a cell center that coincides with samples takes their plain average.
    """
    if not (cell > 0 and radius > 0):
        raise ValueError("cell and radius must be positive")
    if space not in ("linear", "db"):
        raise ValueError(f"unknown interpolation space {space!r}")
    u_centers = (np.arange(max(1, math.ceil(route.length / cell))) + 0.5) * cell

    if not samples:
        v_centers = np.array([route.leg_altitude])
        return HeatmapGrid(u_centers, v_centers, np.full((1, len(u_centers)), np.nan), route)

    xy = np.array([(s.pos.x, s.pos.y) for s in samples])
    z = np.array([s.pos.z for s in samples])
    level = np.array([s.rsrp for s in samples])
    _, u = project_to_polyline(xy, route.xy())

    v_centers = np.arange(round(z.min() / cell), round(z.max() / cell) + 1) * cell

    uu, vv = np.meshgrid(u_centers, v_centers)
    centers = np.column_stack([uu.ravel(), vv.ravel()])
    pairs = cKDTree(centers).sparse_distance_matrix(
        cKDTree(np.column_stack([u, z])), radius, output_type="ndarray"
    )
    rows, cols, dist = pairs["i"], pairs["j"], pairs["v"]
    values = 10.0 ** (level / 10.0) if space == "linear" else level

    exact = dist < 1e-9
    exact_rows = np.zeros(len(centers), dtype=bool)
    exact_rows[rows[exact]] = True
    keep = np.where(exact_rows[rows], exact, True)
    with np.errstate(divide="ignore"):
        w = np.where(exact, 1.0, dist ** -power)[keep]
    rows, cols = rows[keep], cols[keep]

    num = np.bincount(rows, weights=w * values[cols], minlength=len(centers))
    den = np.bincount(rows, weights=w, minlength=len(centers))
    out = np.full(len(centers), np.nan)
    has = den > 0
    out[has] = num[has] / den[has]
    if space == "linear":
        out[has] = 10.0 * np.log10(out[has])
    return HeatmapGrid(u_centers, v_centers, out.reshape(uu.shape), route)


# -- ECDF ------------------------------------------------------------------

@dataclass(frozen=True)
class Ecdf:
    key: Hashable
    values: tuple[float, ...]

    def __call__(self, x: float) -> float:
        return float(np.searchsorted(self.values, x, side="right")) / len(self.values)

    @property
    def support_min(self) -> float:
        return self.values[0]

    def to_dict(self) -> dict:
        return {"key": list(self.key) if isinstance(self.key, tuple) else self.key, "values": list(self.values)}


def ecdf(groups: Mapping[Hashable, Sequence]) -> list[Ecdf]:
    """One empirical CDF per group; group members may be FusedSamples or plain dBm values."""
    out = []
    for key, members in groups.items():
        vals = [m.rsrp if hasattr(m, "rsrp") else float(m) for m in members]
        if not vals:
            raise ValueError(f"group {key!r} is empty")
        out.append(Ecdf(key, tuple(sorted(vals))))
    return out


def group_by_flight(flights: Sequence[Sequence[FusedSample]]) -> dict[tuple, list[FusedSample]]:
    """Key each sample by (route id, route altitude, flight index)."""
    groups: dict[tuple, list[FusedSample]] = {}
    for k, flight in enumerate(flights):
        for s in flight:
            alt = s.route_altitude if s.route_altitude is not None else round(s.pos.z, 1)
            groups.setdefault((s.route_id, float(alt), k), []).append(s)
    return dict(sorted(groups.items()))


# -- regression ------------------------------------------------------------

@dataclass(frozen=True)
class TruncatedFit:
    d_max: float
    intercept: float  # RSRP at 1 m, dBm
    exponent: float
    sigma_resid: float
    n_points: int
    censored_fraction: float

    def mean(self, d) -> np.ndarray:
        return self.intercept - 10.0 * self.exponent * np.log10(d)


@dataclass(frozen=True)
class RegressionResult:
    fits: tuple[TruncatedFit, ...]
    selected_index: int
    censor_threshold: float | None
    max_censored_fraction: float
    distance_range: tuple[float, float]
    selection_fallback: bool = False
    normality: dict = field(default_factory=dict)

    @property
    def selected(self) -> TruncatedFit:
        return self.fits[self.selected_index]

    def to_dict(self) -> dict:
        return {
            "censor_threshold_dbm": self.censor_threshold,
            "max_censored_fraction": self.max_censored_fraction,
            "distance_range_m": list(self.distance_range),
            "selected_index": self.selected_index,
            "selection_fallback": self.selection_fallback,
            "selected": vars(self.selected),
            "fits": [vars(f) for f in self.fits],
            "normality": self.normality,
            "three_sigma_mass": THREE_SIGMA_MASS,
        }


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float, np.ndarray]:
    xm = x.mean()
    sxx = np.sum((x - xm) ** 2)
    if sxx <= 1e-12 * max(1.0, xm * xm) * len(x):
        raise ValueError("degenerate subset: all distances are equal")
    slope = float(np.sum((x - xm) * (y - y.mean())) / sxx)
    intercept = float(y.mean() - slope * xm)
    return intercept, slope, y - (intercept + slope * x)


def censored_fraction(mean: float, sigma: float, threshold: float | None) -> float:
    """Share of the mean +/- 3 sigma Gaussian mass lying below ``threshold``."""
    if threshold is None or not math.isfinite(threshold):
        return 0.0
    if sigma <= 0:
        return 1.0 if mean < threshold else 0.0
    z = min(max((threshold - mean) / sigma, -3.0), 3.0)
    lo = stats.norm.cdf(-3.0)
    return float((stats.norm.cdf(z) - lo) / (stats.norm.cdf(3.0) - lo))


def default_bounds(distances: np.ndarray, count: int = 10) -> np.ndarray:
    d = np.asarray(distances, dtype=float)
    return np.unique(np.linspace(np.percentile(d, 30), d.max(), count))


def fit_truncated_family(
    samples: Sequence[FusedSample],
    d_bounds: Sequence[float] | None = None,
    censor_threshold: float | None = None,
    max_censored_fraction: float = 0.05,
) -> RegressionResult:
    """Fit RSRP against 10*log10(distance) on nested subsets ``distance <= d_max``.

    The selected member is the one with the largest ``d_max`` whose estimated
    censored fraction at the subset's farthest point is at most
    ``max_censored_fraction``. If no member qualifies, the least censored one
    is selected and ``selection_fallback`` is set. ``censor_threshold=None``
    means the data are uncensored.
    """
    d = np.array([s.distance_to_bs for s in samples], dtype=float)
    y = np.array([s.rsrp for s in samples], dtype=float)
    if len(d) < MIN_FIT_POINTS:
        raise ValueError(f"need at least {MIN_FIT_POINTS} samples, got {len(d)}")
    if np.any(d <= 0):
        raise ValueError("distances must be positive")
    bounds = default_bounds(d) if d_bounds is None else np.sort(np.asarray(d_bounds, dtype=float))
    x = 10.0 * np.log10(d)

    fits, residuals = [], []
    for b in bounds:
        m = d <= b
        if m.sum() < MIN_FIT_POINTS:
            raise ValueError(f"bound {b:.2f} m leaves only {int(m.sum())} points")
        intercept, slope, resid = _ols(x[m], y[m])
        sigma = float(np.sqrt(np.sum(resid**2) / max(1, m.sum() - 2)))
        mean_far = intercept + slope * x[m].max()
        fits.append(TruncatedFit(
            d_max=float(b), intercept=intercept, exponent=-slope, sigma_resid=sigma,
            n_points=int(m.sum()), censored_fraction=censored_fraction(mean_far, sigma, censor_threshold),
        ))
        residuals.append(resid)

    ok = [i for i, f in enumerate(fits) if f.censored_fraction <= max_censored_fraction]
    fallback = not ok
    sel = max(ok) if ok else min(range(len(fits)), key=lambda i: (fits[i].censored_fraction, i))

    normality = {}
    resid = residuals[sel]
    if len(resid) >= 8 and np.ptp(resid) > 0:
        ad = stats.anderson(resid, dist="norm")
        i5 = int(np.argmin(np.abs(np.asarray(ad.significance_level) - 5.0)))
        normality = {
            "anderson_darling": float(ad.statistic),
            "critical_value_5pct": float(ad.critical_values[i5]),
            "normal_at_5pct": bool(ad.statistic < ad.critical_values[i5]),
        }
    return RegressionResult(
        fits=tuple(fits), selected_index=sel, censor_threshold=censor_threshold,
        max_censored_fraction=max_censored_fraction,
        distance_range=(float(d.min()), float(d.max())),
        selection_fallback=fallback, normality=normality,
    )


@dataclass(frozen=True)
class Envelope:
    distance: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def to_dict(self) -> dict:
        return {k: [round(float(v), 4) for v in getattr(self, k)] for k in ("distance", "mean", "lower", "upper")}


def reconstruct_band(model: RegressionResult, n: int = 100) -> Envelope:
    """Mean path-loss line and the +/- 3 sigma lines over the sample's distance range."""
    f = model.selected
    lo, hi = model.distance_range
    d = np.geomspace(lo, hi, n) if hi > lo else np.array([lo])
    mean = f.mean(d)
    return Envelope(d, mean, mean - 3.0 * f.sigma_resid, mean + 3.0 * f.sigma_resid)


def band_containment(model: RegressionResult, samples: Sequence[FusedSample]) -> float:
    """Fraction of samples lying inside the selected fit's +/- 3 sigma band."""
    f = model.selected
    d = np.array([s.distance_to_bs for s in samples])
    y = np.array([s.rsrp for s in samples])
    return float(np.mean(np.abs(y - f.mean(d)) <= 3.0 * f.sigma_resid + 1e-12))
