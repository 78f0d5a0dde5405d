"""Scenario files: one JSON document describing a whole campaign.

The document is validated against ``SCHEMA`` (unknown keys are rejected)
before anything runs. Every random stream is derived from the single
``seed`` field.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources

import jsonschema
import numpy as np

from .fuse import FusionConfig, LocalFrame
from .model import AntennaPattern, BuildingModel, GeoPoint, PathLossModel
from .plan import CampaignPlan, plan_main_lobe, plan_roof, plan_side_lobe, truncate_for_terrain
from .simulate import EmissionScenario, ScannerProfile

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_xyz = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}
_rect = {"type": "array", "items": _num, "minItems": 4, "maxItems": 4}
_interval = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


SCHEMA = _obj(
    {
        "name": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "origin": _obj({"lat_deg": _num, "lon_deg": _num, "alt_m": _num}, ["lat_deg", "lon_deg"]),
        "emission": _obj(
            {
                "bs_pos": _xyz,
                "tx_power_dbm": _num,
                "carrier_hz": _pos,
                "antenna": _obj({
                    "boresight_azimuth_deg": _num, "main_gain_dbi": _num, "side_gain_dbi": _num,
                    "back_gain_dbi": _num, "main_halfwidth_deg": _pos, "side_sector_deg": _pos,
                }),
                "building": {"oneOf": [{"type": "null"}, _obj(
                    {
                        "footprint": _rect, "height_m": _pos, "wall_loss_db": _num, "window_loss_db": _num,
                        "window_spans": {"type": "array", "items": _interval},
                        "roof_windows": {"type": "array", "items": _rect},
                        "interior_wall_loss_db": _num,
                        "max_interior_walls": {"type": "integer", "minimum": 0, "maximum": 2},
                        "interior_walls": {"type": "array", "items": {"type": "array", "items": _interval, "minItems": 2, "maxItems": 2}},
                    },
                    ["footprint", "height_m"],
                )]},
                "pathloss": _obj(
                    {"intercept_db": _num, "exponent": _pos, "sigma_db": {"type": "number", "minimum": 0}},
                    ["intercept_db"],
                ),
                "shadowing": _obj({
                    "corr_length_m": {"type": "number", "minimum": 0},
                    "extent": {"type": "array", "items": _interval, "minItems": 3, "maxItems": 3},
                    "resolution_m": _pos,
                }),
            },
            ["bs_pos", "pathloss"],
        ),
        "scanner": _obj({
            "sample_rate_hz": _pos,
            "sensitivity_dbm": {"type": ["number", "null"]},
            "gps_alt_noise_sigma_m": {"type": "number", "minimum": 0},
            "gps_horiz_noise_sigma_m": {"type": "number", "minimum": 0},
            "clock_offset_s": _num,
            "below_floor_policy": {"enum": ["drop", "clamp"]},
        }),
        "plan": _obj({
            "heights_main_m": {"type": "array", "items": _pos, "minItems": 1},
            "height_side_m": _pos,
            "height_roof_m": _pos,
            "repeats": {"type": "integer", "minimum": 1},
            "speed_mps": _pos,
            "main_standoff_m": _pos,
            "main_length_m": _pos,
            "lowest_main_terrain_mask_m": {"type": "array", "items": _interval},
            "side_standoff_m": _pos,
            "side_length_m": _pos,
            "side_override_tail_m": {"type": "number", "minimum": 0},
            "roof_passes": {"type": "integer", "minimum": 0},
            "roof_margin_m": {"type": "number", "minimum": 0},
            "roof_spacing_m": _pos,
        }),
        "fusion": _obj({
            "time_tolerance_s": _pos, "horiz_gate_m": _pos, "vert_gate_m": _pos,
            "offset_search_window_s": _pos, "replace_horizontal": {"type": "boolean"},
        }),
        "analysis": _obj({
            "heatmap_cell_m": _pos,
            "heatmap_radius_m": _pos,
            "idw_power": _pos,
            "idw_space": {"enum": ["linear", "db"]},
            "regression_labels": {"type": "array", "items": {"enum": ["main_lobe", "side_lobe", "back_lobe"]}},
            "truncation_bounds_m": {"type": ["array", "null"], "items": _pos},
            "max_censored_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        }),
        "compliance": _obj({
            "limits": {"type": "array", "items": {"type": "string"}},
            "strict_height": {"type": "boolean"},
        }),
    },
    ["seed", "origin", "emission"],
)


@dataclass(frozen=True)
class PlanSettings:
    heights_main: tuple[float, ...] = (2.0, 4.0, 6.0, 8.0, 10.0, 12.0)
    height_side: float = 5.0
    height_roof: float = 18.0
    repeats: int = 2
    speed: float = 2.0
    main_standoff: float = 10.0
    main_length: float = 100.0
    lowest_main_terrain_mask: tuple[tuple[float, float], ...] = ()
    side_standoff: float = 10.0
    side_length: float = 60.0
    side_override_tail: float = 0.0
    roof_passes: int = 3
    roof_margin: float = 10.0
    roof_spacing: float = 6.0


@dataclass(frozen=True)
class AnalysisSettings:
    heatmap_cell: float = 1.0
    heatmap_radius: float = 1.5
    idw_power: float = 2.0
    idw_space: str = "linear"
    regression_labels: tuple[str, ...] = ("main_lobe",)
    truncation_bounds: tuple[float, ...] | None = None
    max_censored_fraction: float = 0.05


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    frame: LocalFrame
    emission: EmissionScenario
    scanner: ScannerProfile
    plan: PlanSettings = field(default_factory=PlanSettings)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    analysis: AnalysisSettings = field(default_factory=AnalysisSettings)
    limits: tuple[str, ...] = ("germany", "ofcom_inr")
    strict_height: bool = False

    @property
    def censor_threshold(self) -> float | None:
        s = self.scanner.sensitivity
        return s if math.isfinite(s) else None

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed, emission=replace(self.emission, shadow_seed=seed))

    def flight_seed(self, index: int) -> int:
        return int(np.random.SeedSequence([self.seed, 1, index]).generate_state(1)[0])


def validate(doc: dict) -> None:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValueError(f"scenario schema violation at {where}: {exc.message}") from None


def from_dict(doc: dict) -> Scenario:
    validate(doc)
    em = doc["emission"]
    ant = em.get("antenna", {})
    antenna = AntennaPattern(
        boresight_azimuth=ant.get("boresight_azimuth_deg", 90.0),
        main_gain=ant.get("main_gain_dbi", 15.0),
        side_gain=ant.get("side_gain_dbi", 5.0),
        back_gain=ant.get("back_gain_dbi", 0.0),
        main_halfwidth=ant.get("main_halfwidth_deg", 60.0),
        side_sector=ant.get("side_sector_deg", 120.0),
    )
    b = em.get("building")
    building = None
    if b is not None:
        building = BuildingModel(
            footprint=tuple(b["footprint"]),
            height=b["height_m"],
            wall_loss=b.get("wall_loss_db", 20.0),
            window_loss=b.get("window_loss_db", 5.0),
            window_spans=tuple(tuple(s) for s in b.get("window_spans", ())),
            roof_windows=tuple(tuple(r) for r in b.get("roof_windows", ())),
            interior_wall_loss=b.get("interior_wall_loss_db", 5.0),
            max_interior_walls=b.get("max_interior_walls", 2),
            interior_walls=tuple(tuple(tuple(p) for p in w) for w in b.get("interior_walls", ())),
        )
    sc = doc.get("scanner", {})
    sens = sc.get("sensitivity_dbm", -140.0)
    sens = -math.inf if sens is None else float(sens)
    pl = em["pathloss"]
    pathloss = PathLossModel(
        intercept_a=pl["intercept_db"],
        exponent_n=pl.get("exponent", 1.2),
        sigma=pl.get("sigma_db", 5.0),
        censor_threshold=sens,
    )
    sh = em.get("shadowing", {})
    emission = EmissionScenario(
        bs_pos=GeoPoint(*em["bs_pos"]),
        pathloss=pathloss,
        tx_power=em.get("tx_power_dbm", 33.0),
        carrier=em.get("carrier_hz", 3.55e9),
        antenna=antenna,
        building=building,
        shadow_seed=doc["seed"],
        shadow_corr_length=sh.get("corr_length_m", 5.0),
        shadow_extent=tuple(tuple(e) for e in sh.get("extent", ((-150, 150), (-150, 150), (0, 40)))),
        shadow_resolution=sh.get("resolution_m", 1.0),
    )
    scanner = ScannerProfile(
        sample_rate=sc.get("sample_rate_hz", 5.0),
        sensitivity=sens,
        gps_alt_noise_sigma=sc.get("gps_alt_noise_sigma_m", 0.0),
        gps_horiz_noise_sigma=sc.get("gps_horiz_noise_sigma_m", 0.0),
        clock_offset=sc.get("clock_offset_s", 0.0),
        below_floor_policy=sc.get("below_floor_policy", "drop"),
    )
    p = doc.get("plan", {})
    d = PlanSettings()
    plan = PlanSettings(
        heights_main=tuple(p.get("heights_main_m", d.heights_main)),
        height_side=p.get("height_side_m", d.height_side),
        height_roof=p.get("height_roof_m", d.height_roof),
        repeats=p.get("repeats", d.repeats),
        speed=p.get("speed_mps", d.speed),
        main_standoff=p.get("main_standoff_m", d.main_standoff),
        main_length=p.get("main_length_m", d.main_length),
        lowest_main_terrain_mask=tuple(tuple(m) for m in p.get("lowest_main_terrain_mask_m", ())),
        side_standoff=p.get("side_standoff_m", d.side_standoff),
        side_length=p.get("side_length_m", d.side_length),
        side_override_tail=p.get("side_override_tail_m", d.side_override_tail),
        roof_passes=p.get("roof_passes", d.roof_passes),
        roof_margin=p.get("roof_margin_m", d.roof_margin),
        roof_spacing=p.get("roof_spacing_m", d.roof_spacing),
    )
    f = doc.get("fusion", {})
    fusion = FusionConfig(
        time_tolerance=f.get("time_tolerance_s", 0.5),
        horiz_gate=f.get("horiz_gate_m", 3.0),
        vert_gate=f.get("vert_gate_m", 1.5),
        offset_search_window=f.get("offset_search_window_s", 10.0),
        replace_horizontal=f.get("replace_horizontal", False),
    )
    a = doc.get("analysis", {})
    da = AnalysisSettings()
    bounds = a.get("truncation_bounds_m")
    analysis = AnalysisSettings(
        heatmap_cell=a.get("heatmap_cell_m", da.heatmap_cell),
        heatmap_radius=a.get("heatmap_radius_m", da.heatmap_radius),
        idw_power=a.get("idw_power", da.idw_power),
        idw_space=a.get("idw_space", da.idw_space),
        regression_labels=tuple(a.get("regression_labels", da.regression_labels)),
        truncation_bounds=None if bounds is None else tuple(bounds),
        max_censored_fraction=a.get("max_censored_fraction", da.max_censored_fraction),
    )
    c = doc.get("compliance", {})
    o = doc["origin"]
    return Scenario(
        name=doc.get("name", "scenario"),
        seed=doc["seed"],
        frame=LocalFrame(o["lat_deg"], o["lon_deg"], o.get("alt_m", 0.0)),
        emission=emission,
        scanner=scanner,
        plan=plan,
        fusion=fusion,
        analysis=analysis,
        limits=tuple(c.get("limits", ("germany", "ofcom_inr"))),
        strict_height=c.get("strict_height", False),
    )


def loads(text: str) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"scenario is not valid JSON: {exc}") from None
    return from_dict(doc)


def bundled(name: str = "paper_like") -> str:
    """Text of a scenario shipped with the package."""
    return resources.files("npnkit").joinpath("data").joinpath(f"scenario_{name}.json").read_text()


def build_plan(scn: Scenario) -> CampaignPlan:
    """Routes for all test cases: main lobe (ids 1-2), side lobe (3), over the roof (4+)."""
    em, p = scn.emission, scn.plan
    building = em.building
    if building is None:
        raise ValueError("route planning needs a building model")
    bs_xy = (em.bs_pos.x, em.bs_pos.y)
    main = plan_main_lobe(building, em.antenna, p.heights_main, p.main_standoff, p.main_length, bs_xy, route_id=2)
    if p.lowest_main_terrain_mask:
        main[0] = truncate_for_terrain(main[0], p.lowest_main_terrain_mask, route_id=1)
    routes = list(main)
    routes.append(plan_side_lobe(
        building, em.antenna, p.height_side, p.side_standoff, p.side_length, bs_xy,
        route_id=3, override_tail=p.side_override_tail,
    ))
    if p.roof_passes:
        routes += plan_roof(building, em.antenna, p.height_roof, p.roof_passes, bs_xy,
                            margin=p.roof_margin, spacing=p.roof_spacing, first_id=4)
    f = scn.frame
    return CampaignPlan(
        routes=tuple(routes), heights_main=tuple(p.heights_main), height_side=p.height_side,
        height_roof=p.height_roof, repeats=p.repeats, origin=(f.lat0, f.lon0, f.alt0), bs_pos=em.bs_pos,
    )
