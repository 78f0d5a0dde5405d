"""Synthetic data builders shared by the test modules."""

import numpy as np

from npnkit.fuse import FusedSample
from npnkit.model import AntennaPattern, GeoPoint, PathLossModel
from npnkit.simulate import EmissionScenario, ScannerProfile, sample_points


def fused(d, rsrp, route_id=2, t=0.0, z=0.0):
    """A FusedSample ``d`` meters east of a BS at the origin."""
    return FusedSample(t, GeoPoint(float(d), 0.0, z), float(rsrp), route_id, float(d))


def synthetic(distances, intercept, n, sigma=0.0, seed=0):
    rng = np.random.default_rng(seed)
    d = np.asarray(distances, dtype=float)
    y = intercept - 10 * n * np.log10(d) + sigma * rng.standard_normal(len(d))
    return [FusedSample(float(i), GeoPoint(float(di), 0.0, 0.0), float(yi), 2, float(di)) for i, (di, yi) in enumerate(zip(d, y))]


def ring_points(rng, n, rmin, rmax, zmax, area_uniform=True):
    """Random points around the origin; radius uniform in area or in distance."""
    if area_uniform:
        r = np.sqrt(rng.uniform(rmin**2, rmax**2, n))
    else:
        r = rng.uniform(rmin, rmax, n)
    th = rng.uniform(0.0, 2.0 * np.pi, n)
    return np.column_stack([r * np.cos(th), r * np.sin(th), rng.uniform(0.0, zmax, n)])


def omni_scenario(seed, intercept, sensitivity, corr_length, extent=100.0):
    """Isotropic BS 1.5 m up, no building, n = 1.2, sigma = 5 dB."""
    return EmissionScenario(
        GeoPoint(0.0, 0.0, 1.5),
        PathLossModel(intercept, 1.2, 5.0, sensitivity),
        tx_power=0.0,
        antenna=AntennaPattern.isotropic(),
        shadow_seed=seed,
        shadow_corr_length=corr_length,
        shadow_extent=((-extent, extent), (-extent, extent), (0.0, 20.0)),
    )


def survey(scn, xyz, sensitivity):
    """Stationary readings at ``xyz`` turned into fused samples with true distances."""
    samples = sample_points(scn, ScannerProfile(sensitivity=sensitivity), xyz)
    bs = scn.bs_pos.as_array()
    return [
        FusedSample(s.t, s.pos, s.rsrp, 0, float(np.linalg.norm(s.pos.as_array() - bs)))
        for s in samples
    ]
