"""Regulatory unit conversions and per-sample limit evaluation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

import numpy as np

from .fuse import FusedSample
from .model import RegulatoryLimit

# E [dBuV/m] = P [dBm] + 20 log10(f [MHz]) + 77.2 - G [dBi] for a matched antenna in 377 ohm free space
FIELD_STRENGTH_CONSTANT_DB = 77.2
RSRP_REFERENCE_BW_HZ = 30e3
STRICT_HEIGHT_WINDOW_M = 1.0

PASS, FAIL, BELOW_FLOOR = "pass", "fail", "below_measurement_floor"


def field_strength_to_rx_power(e: float, f: float, gain: float, limit_bw: float, ref_bw: float) -> float:
    """Received power in dBm per ``ref_bw`` for a field strength of ``e`` dBuV/m per ``limit_bw``."""
    if not (f > 0 and limit_bw > 0 and ref_bw > 0):
        raise ValueError("frequency and bandwidths must be positive")
    return e - 20.0 * math.log10(f / 1e6) - FIELD_STRENGTH_CONSTANT_DB + gain - 10.0 * math.log10(limit_bw / ref_bw)


def inr_to_desensitization(inr: float) -> float:
    """Receiver sensitivity loss in dB caused by an interference-to-noise ratio ``inr`` (dB)."""
    return 10.0 * math.log10(1.0 + 10.0 ** (inr / 10.0))


def limit_to_dbm(limit: RegulatoryLimit, carrier: float, ref_bw: float = RSRP_REFERENCE_BW_HZ) -> float:
    if limit.kind == "inr":
        raise ValueError("I/N limits cannot be evaluated against received-power samples")
    if limit.kind == "field_strength":
        return field_strength_to_rx_power(limit.value, carrier, limit.antenna_gain_assumed, limit.meas_bandwidth, ref_bw)
    return limit.value - 10.0 * math.log10(limit.meas_bandwidth / ref_bw)


def load_limit(text: str) -> RegulatoryLimit:
    """Parse a limit file: ``{kind, value, unit, meas_bandwidth_hz, eval_height_m, antenna_gain_dbi}``."""
    doc = json.loads(text)
    expected = {"kind", "value", "unit", "meas_bandwidth_hz", "eval_height_m", "antenna_gain_dbi"}
    if set(doc) != expected:
        raise ValueError(f"limit file keys {sorted(doc)} differ from {sorted(expected)}")
    return RegulatoryLimit(
        kind=doc["kind"],
        value=float(doc["value"]),
        meas_bandwidth=doc["meas_bandwidth_hz"],
        eval_height=doc["eval_height_m"],
        antenna_gain_assumed=float(doc["antenna_gain_dbi"] or 0.0),
        unit=doc["unit"],
    )


def limit_to_json(limit: RegulatoryLimit) -> str:
    return json.dumps({
        "kind": limit.kind, "value": limit.value, "unit": limit.unit,
        "meas_bandwidth_hz": limit.meas_bandwidth, "eval_height_m": limit.eval_height,
        "antenna_gain_dbi": limit.antenna_gain_assumed,
    }, indent=2, sort_keys=True) + "\n"


def preset(name: str) -> RegulatoryLimit:
    """Bundled limit presets: ``"germany"`` and ``"ofcom_inr"``."""
    try:
        text = resources.files("npnkit").joinpath("data").joinpath(f"limit_{name}.json").read_text()
    except FileNotFoundError:
        raise ValueError(f"unknown limit preset {name!r}") from None
    return load_limit(text)


@dataclass(frozen=True)
class ComplianceReport:
    limit: RegulatoryLimit
    limit_dbm: float
    censor_threshold: float | None
    verdicts: tuple[str, ...]
    margins: tuple[float | None, ...]
    measurement_insufficient: bool
    worst_index: int | None
    samples: tuple[FusedSample, ...]

    @property
    def counts(self) -> dict[str, int]:
        return {v: self.verdicts.count(v) for v in (PASS, FAIL, BELOW_FLOOR)}

    @property
    def min_margin(self) -> float | None:
        finite = [m for m in self.margins if m is not None]
        return min(finite) if finite else None

    def to_dict(self) -> dict:
        worst = None
        if self.worst_index is not None:
            s = self.samples[self.worst_index]
            worst = {"index": self.worst_index, "t": s.t, "x_m": s.pos.x, "y_m": s.pos.y, "z_m": s.pos.z,
                     "rsrp_dbm": s.rsrp, "margin_db": self.margins[self.worst_index]}
        return {
            "limit": {"kind": self.limit.kind, "value": self.limit.value, "unit": self.limit.unit,
                      "meas_bandwidth_hz": self.limit.meas_bandwidth, "eval_height_m": self.limit.eval_height,
                      "antenna_gain_dbi": self.limit.antenna_gain_assumed},
            "limit_dbm": round(self.limit_dbm, 4),
            "censor_threshold_dbm": self.censor_threshold,
            "measurement_insufficient": self.measurement_insufficient,
            "summary": {**self.counts, "total": len(self.verdicts),
                        "min_margin_db": None if self.min_margin is None else round(self.min_margin, 4)},
            "worst_case": worst,
            "samples": [
                {"t": s.t, "route_id": s.route_id, "rsrp_dbm": s.rsrp, "verdict": v,
                 "margin_db": None if m is None else round(m, 4)}
                for s, v, m in zip(self.samples, self.verdicts, self.margins)
            ],
        }


def evaluate(
    samples: Sequence[FusedSample],
    limit: RegulatoryLimit,
    censor_threshold: float | None,
    carrier: float = 3.55e9,
    ref_bw: float = RSRP_REFERENCE_BW_HZ,
    strict_height: bool = False,
) -> ComplianceReport:
    """Compare each sample's RSRP with ``limit`` converted to dBm per ``ref_bw``.

    Margins are ``limit - rsrp`` (positive means compliant). If the limit lies
    below the scanner's censoring threshold, no sample can demonstrate
    compliance and every verdict is ``below_measurement_floor``.
    With ``strict_height`` only samples within 1 m of the limit's evaluation
    height are judged.
    """
    limit_dbm = limit_to_dbm(limit, carrier, ref_bw)
    if strict_height:
        if limit.eval_height is None:
            raise ValueError("strict height mode needs a limit with eval_height")
        samples = [s for s in samples if abs(s.pos.z - limit.eval_height) <= STRICT_HEIGHT_WINDOW_M]
    samples = tuple(samples)
    insufficient = censor_threshold is not None and limit_dbm < censor_threshold

    if insufficient:
        verdicts = (BELOW_FLOOR,) * len(samples)
        margins: tuple = (None,) * len(samples)
        worst = None
    else:
        m = np.array([limit_dbm - s.rsrp for s in samples], dtype=float)
        verdicts = tuple(PASS if v >= 0 else FAIL for v in m)
        margins = tuple(float(v) for v in m)
        worst = int(np.argmin(m)) if len(m) else None
    return ComplianceReport(limit, limit_dbm, censor_threshold, verdicts, margins, insufficient, worst, samples)
