"""``npnkit`` command line: one subcommand per pipeline stage plus ``campaign``.

Failures exit nonzero and print a single JSON object on stderr::

    {"error": {"stage": "fuse", "type": "LogFormatError", "message": "..."}}
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import jsonschema

from . import __version__
from .fuse import FusionConfig, LocalFrame, parse_fused_csv, write_fused_csv
from .pipeline import (
    StageError,
    _dump,
    analyze_flights,
    comply_samples,
    fuse_files,
    run_campaign,
    simulate_flights,
    write_atomic,
)
from .plan import CampaignPlan, plan_from_json, plan_to_json
from .scenario import SCHEMA, Scenario, build_plan, bundled, from_dict, validate

logger = logging.getLogger("npnkit")

FORMATS = ("csv", "json", "geojson")
EXIT_INPUT, EXIT_STAGE = 2, 1


class InputError(ValueError):
    """Bad or missing input file; reported with stage ``input``."""


def _read_text(path: str | os.PathLike) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from None


def _scenario_source(arg: str | None) -> tuple[str, bytes]:
    if arg is None:
        text = bundled()
    elif arg.startswith("bundled:"):
        try:
            text = bundled(arg.split(":", 1)[1])
        except FileNotFoundError:
            raise InputError(f"no bundled scenario named {arg.split(':', 1)[1]!r}") from None
    else:
        text = _read_text(arg)
    return text, text.encode()


def load_scenario(arg: str | None, seed: int | None = None) -> tuple[Scenario, bytes]:
    text, raw = _scenario_source(arg)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"scenario is not valid JSON: {exc}") from None
    try:
        scn = from_dict(doc)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if seed is not None:
        scn = scn.with_seed(seed)
    return scn, raw


def _load_plan(path: str) -> CampaignPlan:
    try:
        return plan_from_json(_read_text(path))
    except (ValueError, json.JSONDecodeError) as exc:
        raise InputError(f"plan {path}: {exc}") from None


def _fusion_config(path: str | None) -> FusionConfig:
    if path is None:
        return FusionConfig()
    try:
        doc = json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise InputError(f"fusion config is not valid JSON: {exc}") from None
    if "fusion" in doc:
        try:
            validate(doc)
        except ValueError as exc:
            raise InputError(str(exc)) from None
        doc = doc["fusion"]
    else:
        try:
            jsonschema.validate(doc, SCHEMA["properties"]["fusion"])
        except jsonschema.ValidationError as exc:
            raise InputError(f"fusion config schema violation: {exc.message}") from None
    d = FusionConfig()
    return FusionConfig(
        time_tolerance=doc.get("time_tolerance_s", d.time_tolerance),
        horiz_gate=doc.get("horiz_gate_m", d.horiz_gate),
        vert_gate=doc.get("vert_gate_m", d.vert_gate),
        offset_search_window=doc.get("offset_search_window_s", d.offset_search_window),
        replace_horizontal=doc.get("replace_horizontal", d.replace_horizontal),
    )


def _formats(args) -> tuple[str, ...]:
    return tuple(args.format) if args.format else ("csv", "geojson")


def cmd_plan(args) -> int:
    scn, _ = load_scenario(args.scenario, args.seed)
    try:
        plan = build_plan(scn)
    except ValueError as exc:
        raise StageError("plan", str(exc)) from exc
    out = Path(args.out)
    if out.suffix != ".json":
        out = out / "plan.json"
    write_atomic(out, plan_to_json(plan))
    return 0


def cmd_simulate(args) -> int:
    scn, _ = load_scenario(args.scenario, args.seed)
    try:
        plan = build_plan(scn)
    except ValueError as exc:
        raise StageError("plan", str(exc)) from exc
    out = Path(args.out)
    write_atomic(out / "plan.json", plan_to_json(plan))
    try:
        simulate_flights(scn, plan, out)
    except ValueError as exc:
        raise StageError("simulate", str(exc)) from exc
    return 0


def cmd_fuse(args) -> int:
    plan = _load_plan(args.plan)
    if plan.origin is None:
        raise InputError("plan has no frame origin; fused positions need one")
    frame = LocalFrame(*plan.origin)
    cfg = _fusion_config(args.config)
    scan_csv, tel_csv = _read_text(args.scanner), _read_text(args.telemetry)
    try:
        fused, offset = fuse_files(scan_csv, tel_csv, plan, cfg, frame)
    except ValueError as exc:
        raise StageError("fuse", str(exc)) from exc
    logger.info("clock offset %.2f s, %d fused samples", offset, len(fused))
    write_atomic(Path(args.out), write_fused_csv(fused))
    return 0


def cmd_analyze(args) -> int:
    flights = []
    for path in args.fused:
        try:
            flights.append(parse_fused_csv(_read_text(path)))
        except ValueError as exc:
            raise StageError("analyze", f"{path}: {exc}") from exc
    plan = _load_plan(args.plan) if args.plan else None
    scn = load_scenario(args.scenario)[0] if args.scenario else None
    censor = args.censor_threshold
    if censor is None and scn is not None:
        censor = scn.censor_threshold
    reg_ids = None
    if plan is not None and scn is not None:
        reg_ids = sorted({r.id for r in plan.routes if r.label in scn.analysis.regression_labels})
    try:
        analyze_flights(flights, plan, scn, Path(args.out), _formats(args), reg_ids, censor)
    except ValueError as exc:
        raise StageError("analyze", str(exc)) from exc
    return 0


def cmd_comply(args) -> int:
    samples = [s for path in args.fused for s in parse_fused_csv(_read_text(path))]
    scn = load_scenario(args.scenario)[0] if args.scenario else None
    censor = args.censor_threshold
    if censor is None and scn is not None:
        censor = scn.censor_threshold
    carrier = args.carrier if args.carrier is not None else (scn.emission.carrier if scn else 3.55e9)
    limits = args.limit or (list(scn.limits) if scn else ["germany"])
    for name in limits:
        if name.endswith(".json") and not Path(name).is_file():
            raise InputError(f"limit file {name} does not exist")
    try:
        reports = comply_samples(samples, limits, censor, carrier, Path(args.out), args.strict_height)
    except ValueError as exc:
        raise StageError("comply", str(exc)) from exc
    for key, doc in reports.items():
        logger.info("%s: %s", key, doc.get("summary", "not evaluable"))
    return 0


def cmd_campaign(args) -> int:
    scn, raw = load_scenario(args.scenario, args.seed)
    if args.strict_height:
        scn = replace(scn, strict_height=True)
    manifest = run_campaign(scn, Path(args.out), raw, _formats(args))
    sys.stdout.write(_dump({"out": str(args.out), "seed": manifest["seed"], "files": len(manifest["outputs"])}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="npnkit", description="UAV-borne coverage measurement toolkit")
    p.add_argument("--version", action="version", version=f"npnkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_opts(sp, seed=True):
        sp.add_argument("--scenario", help="scenario JSON path, or bundled:<name> (default bundled:paper_like)")
        if seed:
            sp.add_argument("--seed", type=int, help="override the scenario seed")

    def format_opt(sp):
        sp.add_argument("--format", action="append", choices=FORMATS,
                        help="heatmap output format; repeat for several (default csv and geojson)")

    sp = sub.add_parser("plan", help="write the waypoint plan JSON")
    scenario_opts(sp)
    sp.add_argument("--out", required=True, help="output file (.json) or directory")
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("simulate", help="simulate scanner and telemetry logs for every flight")
    scenario_opts(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("fuse", help="align one scanner log with its telemetry log")
    sp.add_argument("--scanner", required=True)
    sp.add_argument("--telemetry", required=True)
    sp.add_argument("--plan", required=True)
    sp.add_argument("--config", help="fusion config JSON (or a scenario file)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_fuse)

    sp = sub.add_parser("analyze", help="heatmaps, CDFs and regression from fused CSVs")
    sp.add_argument("fused", nargs="+", help="fused CSV files, one per flight")
    sp.add_argument("--plan")
    scenario_opts(sp, seed=False)
    sp.add_argument("--censor-threshold", type=float)
    format_opt(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("comply", help="evaluate fused samples against regulatory limits")
    sp.add_argument("fused", nargs="+")
    sp.add_argument("--limit", action="append", help="limit JSON file or preset name; repeatable")
    scenario_opts(sp, seed=False)
    sp.add_argument("--censor-threshold", type=float)
    sp.add_argument("--carrier", type=float, help="carrier frequency in Hz")
    sp.add_argument("--strict-height", action="store_true")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_comply)

    sp = sub.add_parser("campaign", help="plan, simulate, fuse, analyze and comply in one run")
    scenario_opts(sp)
    format_opt(sp)
    sp.add_argument("--strict-height", action="store_true")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_campaign)
    return p


def _error(stage: str, exc: BaseException) -> None:
    if isinstance(exc, StageError) and exc.__cause__ is not None:
        exc = exc.__cause__
    sys.stderr.write(json.dumps({"error": {"stage": stage, "type": type(exc).__name__, "message": str(exc)}}) + "\n")


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("NPNKIT_LOG", "WARNING").upper()
    logging.basicConfig(
        level=level if isinstance(logging.getLevelName(level), int) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        _error("input", exc)
        return EXIT_INPUT
    except StageError as exc:
        _error(exc.stage, exc)
        return EXIT_STAGE
    except ValueError as exc:
        _error(args.command, exc)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
