"""End-to-end campaign stages writing the on-disk layout used by the CLI.

Layout under the output directory::

    plan.json
    flights/flight_NN_rRR_hHH.H_{scanner,telemetry}.csv
    fused/flight_NN_rRR_hHH.H.csv
    analysis/heatmap_*.{csv,json,geojson}, cdf.json, regression.json
    compliance/<limit>.json
    manifest.json
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import platform
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy

from . import __version__
from .analyze import (
    band_containment,
    ecdf,
    fit_truncated_family,
    group_by_flight,
    heatmap,
    reconstruct_band,
)
from .comply import evaluate, inr_to_desensitization, load_limit, preset
from .fuse import (
    FusedSample,
    LocalFrame,
    estimate_clock_offset,
    fuse,
    parse_fused_csv,
    parse_scanner_csv,
    parse_telemetry_csv,
    write_fused_csv,
    write_scanner_csv,
    write_telemetry_csv,
)
from .model import Route
from .plan import CampaignPlan, plan_to_json
from .scenario import Scenario, build_plan
from .simulate import fly

logger = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


@dataclass(frozen=True)
class FlightSpec:
    index: int
    route: Route

    @property
    def stem(self) -> str:
        return f"flight_{self.index:02d}_r{self.route.id}_h{self.route.leg_altitude:04.1f}"


def flight_specs(plan: CampaignPlan) -> list[FlightSpec]:
    specs = []
    for route in plan.routes:
        for _ in range(plan.repeats):
            specs.append(FlightSpec(len(specs), route))
    return specs


def simulate_flights(scn: Scenario, plan: CampaignPlan, out_dir: Path) -> list[FlightSpec]:
    specs = flight_specs(plan)
    for spec in specs:
        scan, tel = fly(scn.emission, scn.scanner, spec.route, scn.plan.speed, seed=scn.flight_seed(spec.index))
        write_atomic(out_dir / "flights" / f"{spec.stem}_scanner.csv", write_scanner_csv(scan, scn.frame))
        write_atomic(out_dir / "flights" / f"{spec.stem}_telemetry.csv", write_telemetry_csv(tel, scn.frame))
        logger.info("flight %s: %d scanner records, %d telemetry points", spec.stem, len(scan), len(tel))
    return specs


def fuse_files(scan_csv: str, tel_csv: str, plan: CampaignPlan, scn_fusion, frame: LocalFrame) -> tuple[list[FusedSample], float]:
    scan = parse_scanner_csv(scan_csv, frame)
    tel = parse_telemetry_csv(tel_csv, frame)
    if not scan:
        return [], 0.0
    offset = estimate_clock_offset(scan, tel, scn_fusion)
    return fuse(scan, tel, plan.routes, scn_fusion, bs_pos=plan.bs_pos, offset=offset), offset


def _reference_route(plan: CampaignPlan, routes: Sequence[Route]) -> Route:
    return max(routes, key=lambda r: (r.length, -r.id))


def analyze_flights(
    flights: Sequence[Sequence[FusedSample]],
    plan: CampaignPlan | None,
    scn: Scenario | None,
    out_dir: Path,
    formats: Sequence[str] = ("csv", "geojson"),
    regression_route_ids: Sequence[int] | None = None,
    censor_threshold: float | None = None,
) -> dict:
    """Heatmaps per test case, per-flight CDFs and the regression family; returns the regression report."""
    settings = scn.analysis if scn is not None else None
    all_samples = [s for f in flights for s in f]
    written = {}

    if plan is not None:
        by_label: dict[str, list[Route]] = {}
        for r in plan.routes:
            by_label.setdefault(r.label, []).append(r)
        jobs = []
        if "main_lobe" in by_label:
            ids = {r.id for r in by_label["main_lobe"]}
            jobs.append(("main_lobe", _reference_route(plan, by_label["main_lobe"]), ids))
        for label in ("side_lobe", "back_lobe"):
            for r in by_label.get(label, []):
                jobs.append((f"route{r.id}", r, {r.id}))
        for name, route, ids in jobs:
            kw = {}
            if settings is not None:
                kw = dict(cell=settings.heatmap_cell, radius=settings.heatmap_radius,
                          power=settings.idw_power, space=settings.idw_space)
            grid = heatmap([s for s in all_samples if s.route_id in ids], route, **kw)
            if "csv" in formats:
                write_atomic(out_dir / "analysis" / f"heatmap_{name}.csv", grid.to_csv())
            if "json" in formats:
                write_atomic(out_dir / "analysis" / f"heatmap_{name}.json", _dump({
                    "route_id": route.id, "u_m": grid.u_centers.round(4).tolist(),
                    "v_m": grid.v_centers.round(4).tolist(),
                    "rsrp_dbm": [[None if np.isnan(c) else round(float(c), 2) for c in row] for row in grid.cells],
                }))
            if "geojson" in formats:
                frame = scn.frame if scn is not None else (LocalFrame(*plan.origin) if plan.origin else None)
                if frame is None:
                    raise ValueError("GeoJSON export needs the frame origin (scenario or plan)")
                write_atomic(out_dir / "analysis" / f"heatmap_{name}.geojson", grid.to_geojson(frame))
            written[name] = grid

    cdfs = ecdf(group_by_flight(flights))
    write_atomic(out_dir / "analysis" / "cdf.json", _dump({
        "group_key": ["route_id", "altitude_m", "flight_index"],
        "censor_threshold_dbm": censor_threshold,
        "cdfs": [c.to_dict() for c in cdfs],
    }))

    reg_samples = all_samples
    if regression_route_ids is not None:
        reg_samples = [s for s in all_samples if s.route_id in set(regression_route_ids)]
    bounds = settings.truncation_bounds if settings is not None else None
    max_cf = settings.max_censored_fraction if settings is not None else 0.05
    result = fit_truncated_family(reg_samples, bounds, censor_threshold, max_cf)
    report = result.to_dict()
    report["route_ids"] = sorted({s.route_id for s in reg_samples})
    report["band"] = reconstruct_band(result).to_dict()
    report["band_containment"] = band_containment(result, reg_samples)
    write_atomic(out_dir / "analysis" / "regression.json", _dump(report))
    return report


def comply_samples(
    samples: Sequence[FusedSample],
    limit_names: Sequence[str],
    censor_threshold: float | None,
    carrier: float,
    out_dir: Path,
    strict_height: bool = False,
) -> dict[str, dict]:
    reports = {}
    for name in limit_names:
        path = Path(name)
        limit = load_limit(path.read_text()) if path.suffix == ".json" else preset(name)
        key = path.stem if path.suffix == ".json" else name
        if limit.kind == "inr":
            doc = {
                "limit": {"kind": limit.kind, "value": limit.value, "unit": limit.unit},
                "evaluable": False,
                "note": "I/N limits are planning thresholds; samples carry no interference/noise split",
                "desensitization_db": round(inr_to_desensitization(limit.value), 4),
            }
        else:
            doc = evaluate(samples, limit, censor_threshold, carrier=carrier, strict_height=strict_height).to_dict()
            doc["evaluable"] = True
        write_atomic(out_dir / "compliance" / f"{key}.json", _dump(doc))
        reports[key] = doc
    return reports


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_manifest(out_dir: Path, scn: Scenario, inputs: dict[str, bytes]) -> dict:
    outputs = {}
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json" and not p.name.startswith("."):
            outputs[p.relative_to(out_dir).as_posix()] = _sha256(p.read_bytes())
    doc = {
        "tool": "npnkit",
        "versions": {"npnkit": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "scenario": scn.name,
        "seed": scn.seed,
        "inputs": {k: _sha256(v) for k, v in sorted(inputs.items())},
        "outputs": outputs,
    }
    write_atomic(out_dir / "manifest.json", _dump(doc))
    return doc


def run_campaign(scn: Scenario, out_dir: Path, scenario_bytes: bytes, formats=("csv", "geojson")) -> dict:
    """simulate -> fuse -> analyze -> comply, returning the manifest."""
    out_dir = Path(out_dir)
    try:
        plan = build_plan(scn)
    except ValueError as exc:
        raise StageError("plan", str(exc)) from exc
    write_atomic(out_dir / "plan.json", plan_to_json(plan))

    try:
        specs = simulate_flights(scn, plan, out_dir)
    except ValueError as exc:
        raise StageError("simulate", str(exc)) from exc

    flights = []
    try:
        for spec in specs:
            scan_csv = (out_dir / "flights" / f"{spec.stem}_scanner.csv").read_text()
            tel_csv = (out_dir / "flights" / f"{spec.stem}_telemetry.csv").read_text()
            fused, offset = fuse_files(scan_csv, tel_csv, plan, scn.fusion, scn.frame)
            logger.info("fused %s: %d samples, clock offset %.2f s", spec.stem, len(fused), offset)
            text = write_fused_csv(fused)
            write_atomic(out_dir / "fused" / f"{spec.stem}.csv", text)
            # Analyze what was written, so a staged CLI run reproduces the campaign exactly.
            flights.append(parse_fused_csv(text))
    except ValueError as exc:
        raise StageError("fuse", str(exc)) from exc

    reg_ids = sorted({r.id for r in plan.routes if r.label in scn.analysis.regression_labels})
    try:
        analyze_flights(flights, plan, scn, out_dir, formats, reg_ids, scn.censor_threshold)
    except ValueError as exc:
        raise StageError("analyze", str(exc)) from exc

    try:
        comply_samples([s for f in flights for s in f], scn.limits, scn.censor_threshold,
                       scn.emission.carrier, out_dir, scn.strict_height)
    except ValueError as exc:
        raise StageError("comply", str(exc)) from exc

    return write_manifest(out_dir, scn, {"scenario": scenario_bytes})
