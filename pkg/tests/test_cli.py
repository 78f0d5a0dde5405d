import hashlib
import json
import subprocess
import sys
from pathlib import Path

import pytest

from npnkit import scenario as scenario_mod
from npnkit.cli import main
from npnkit.scenario import bundled, from_dict, validate


def run(*argv):
    return main([str(a) for a in argv])


def _tree(root: Path) -> dict[str, bytes]:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def _error(capsys) -> dict:
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"]


@pytest.fixture(scope="module")
def campaign_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("campaign")
    assert main(["campaign", "--out", str(out)]) == 0
    return out


def test_campaign_layout(campaign_dir):
    names = set(_tree(campaign_dir))
    for required in ("plan.json", "manifest.json", "analysis/regression.json", "analysis/cdf.json",
                     "analysis/heatmap_main_lobe.csv", "analysis/heatmap_main_lobe.geojson",
                     "compliance/germany.json", "compliance/ofcom_inr.json"):
        assert required in names
    assert sum(n.startswith("flights/") for n in names) == 40
    assert sum(n.startswith("fused/") for n in names) == 20
    manifest = json.loads((campaign_dir / "manifest.json").read_text())
    assert manifest["seed"] == 20201
    assert manifest["inputs"]["scenario"] == hashlib.sha256(bundled().encode()).hexdigest()
    for name, digest in manifest["outputs"].items():
        assert hashlib.sha256((campaign_dir / name).read_bytes()).hexdigest() == digest


def test_campaign_compliance_reports(campaign_dir):
    g = json.loads((campaign_dir / "compliance/germany.json").read_text())
    assert g["evaluable"] and g["limit_dbm"] == pytest.approx(-138.4231, abs=1e-4)
    assert sum(g["summary"][k] for k in ("pass", "fail", "below_measurement_floor")) == g["summary"]["total"]
    o = json.loads((campaign_dir / "compliance/ofcom_inr.json").read_text())
    assert o["evaluable"] is False and o["desensitization_db"] == pytest.approx(0.9732, abs=1e-4)


def test_staged_commands_reproduce_campaign(campaign_dir, tmp_path):
    stem = "flight_03_r2_h04.0"
    flights = campaign_dir / "flights"
    assert run("simulate", "--out", tmp_path / "sim") == 0
    assert (tmp_path / "sim/flights" / f"{stem}_scanner.csv").read_bytes() == (flights / f"{stem}_scanner.csv").read_bytes()
    assert run("fuse", "--scanner", flights / f"{stem}_scanner.csv", "--telemetry", flights / f"{stem}_telemetry.csv",
               "--plan", campaign_dir / "plan.json", "--out", tmp_path / "one.csv") == 0
    assert (tmp_path / "one.csv").read_bytes() == (campaign_dir / "fused" / f"{stem}.csv").read_bytes()

    fused = sorted((campaign_dir / "fused").glob("*.csv"))
    assert run("analyze", *fused, "--plan", campaign_dir / "plan.json", "--scenario", "bundled:paper_like",
               "--out", tmp_path / "a") == 0
    for name in ("regression.json", "cdf.json", "heatmap_main_lobe.csv", "heatmap_route5.geojson"):
        assert (tmp_path / "a/analysis" / name).read_bytes() == (campaign_dir / "analysis" / name).read_bytes()
    assert run("comply", *fused, "--scenario", "bundled:paper_like", "--out", tmp_path / "c") == 0
    assert (tmp_path / "c/compliance/germany.json").read_bytes() == (campaign_dir / "compliance/germany.json").read_bytes()


def test_plan_command(tmp_path):
    assert run("plan", "--out", tmp_path / "p.json") == 0
    doc = json.loads((tmp_path / "p.json").read_text())
    assert [r["id"] for r in doc["routes"]] == [1, 2, 2, 2, 2, 2, 3, 4, 5, 6]
    assert doc["routes"][0]["waypoints"] == [[30.0, 50.0, 2.0], [30.0, -20.0, 2.0]]


def test_simulate_twice_is_byte_identical(tmp_path):
    assert run("simulate", "--out", tmp_path / "a", "--seed", 7) == 0
    assert run("simulate", "--out", tmp_path / "b", "--seed", 7) == 0
    assert run("simulate", "--out", tmp_path / "c", "--seed", 8) == 0
    a, b, c = (_tree(tmp_path / k) for k in "abc")
    assert a == b
    assert a != c


def test_swapped_fuse_inputs_name_the_header(campaign_dir, tmp_path, capsys):
    stem = campaign_dir / "flights" / "flight_00_r1_h02.0"
    code = run("fuse", "--scanner", f"{stem}_telemetry.csv", "--telemetry", f"{stem}_scanner.csv",
               "--plan", campaign_dir / "plan.json", "--out", tmp_path / "x.csv")
    assert code != 0
    err = _error(capsys)
    assert err["stage"] == "fuse" and err["type"] == "LogFormatError"
    assert "scanner CSV header mismatch" in err["message"] and "alt_baro_m" in err["message"]
    assert not (tmp_path / "x.csv").exists()


def test_schema_violation_and_missing_files(tmp_path, capsys):
    doc = json.loads(bundled())
    doc["emission"]["antenna"]["beamwidth"] = 65
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    assert run("campaign", "--scenario", bad, "--out", tmp_path / "o") == 2
    err = _error(capsys)
    assert err["stage"] == "input" and "emission/antenna" in err["message"] and "beamwidth" in err["message"]
    assert not (tmp_path / "o").exists()

    assert run("campaign", "--scenario", tmp_path / "nope.json", "--out", tmp_path / "o") == 2
    assert "nope.json" in _error(capsys)["message"]
    assert run("comply", tmp_path / "missing.csv", "--out", tmp_path / "o") == 2


def test_stage_errors_carry_the_stage(tmp_path, capsys):
    doc = json.loads(bundled())
    doc["plan"]["height_roof_m"] = 8.0  # below the 10 m roof
    bad = tmp_path / "low_roof.json"
    bad.write_text(json.dumps(doc))
    assert run("campaign", "--scenario", bad, "--out", tmp_path / "o") == 1
    err = _error(capsys)
    assert err["stage"] == "plan" and "roof" in err["message"]


def test_inputs_are_not_mutated(tmp_path):
    scn = tmp_path / "s.json"
    scn.write_text(bundled())
    before = scn.read_bytes()
    assert run("plan", "--scenario", scn, "--out", tmp_path / "p.json") == 0
    assert run("simulate", "--scenario", scn, "--out", tmp_path / "sim") == 0
    stem = tmp_path / "sim/flights/flight_02_r2_h04.0"
    inputs = [Path(f"{stem}_scanner.csv"), Path(f"{stem}_telemetry.csv"), tmp_path / "p.json"]
    snap = [p.read_bytes() for p in inputs]
    assert run("fuse", "--scanner", inputs[0], "--telemetry", inputs[1], "--plan", inputs[2],
               "--config", scn, "--out", tmp_path / "f.csv") == 0
    assert [p.read_bytes() for p in inputs] == snap
    assert scn.read_bytes() == before


def test_console_script_and_log_env(tmp_path):
    env = {"NPNKIT_LOG": "info", "PATH": "/usr/bin:/bin"}
    proc = subprocess.run([sys.executable, "-m", "npnkit.cli", "plan", "--out", str(tmp_path / "p.json")],
                          capture_output=True, text=True, env=env)
    assert proc.returncode == 0
    bad = subprocess.run([sys.executable, "-m", "npnkit.cli", "fuse", "--scanner", "a", "--telemetry", "b",
                          "--plan", "c", "--out", "d"], capture_output=True, text=True, env=env)
    assert bad.returncode == 2
    assert json.loads(bad.stderr.strip().splitlines()[-1])["error"]["stage"] == "input"


# -- scenario files --------------------------------------------------------

def test_bundled_scenario_validates():
    doc = json.loads(bundled())
    validate(doc)
    scn = from_dict(doc)
    assert scn.seed == 20201 and scn.emission.pathloss.exponent_n == 1.2
    assert scn.censor_threshold == -140.0
    assert scn.with_seed(5).emission.shadow_seed == 5
    assert scn.flight_seed(3) == scn.flight_seed(3) != scn.flight_seed(4)


def test_null_sensitivity_disables_censoring():
    doc = json.loads(bundled())
    doc["scanner"]["sensitivity_dbm"] = None
    assert from_dict(doc).censor_threshold is None


def test_invalid_json_is_reported():
    with pytest.raises(ValueError, match="not valid JSON"):
        scenario_mod.loads("{")


# -- exponent example on the bundled scenario ---------------------------

def _regression(tmp_path, doc):
    path = tmp_path / "scn.json"
    path.write_text(json.dumps(doc))
    assert run("campaign", "--scenario", path, "--out", tmp_path / "out", "--format", "csv") == 0
    return json.loads((tmp_path / "out/analysis/regression.json").read_text())


@pytest.mark.xfail(
    strict=True,
    reason="window layout biases the main-lobe fit by about +0.7 and 5 dB shadowing over a 30-59 m "
    "span scatters it by about 0.5; see the decisions ledger",
)
def test_campaign_selected_exponent(campaign_dir):
    doc = json.loads((campaign_dir / "analysis/regression.json").read_text())
    assert doc["selected"]["exponent"] == pytest.approx(1.2, abs=0.1)


def test_campaign_recovers_exponent_without_structure(tmp_path):
    doc = json.loads(bundled())
    doc["emission"]["building"]["window_spans"] = []
    doc["emission"]["pathloss"]["sigma_db"] = 0.0
    reg = _regression(tmp_path, doc)
    assert reg["selected"]["exponent"] == pytest.approx(1.2, abs=0.1)
    assert reg["route_ids"] == [1, 2]
