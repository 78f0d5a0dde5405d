import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st
from synth import fused

from npnkit.comply import (
    BELOW_FLOOR,
    FAIL,
    PASS,
    evaluate,
    field_strength_to_rx_power,
    inr_to_desensitization,
    limit_to_dbm,
    limit_to_json,
    load_limit,
    preset,
)
from npnkit.model import RegulatoryLimit

GERMANY = RegulatoryLimit("field_strength", 32.0, 5e6, 3.0, 0.0, "dBuV/m")


def _oracle_rx_power(e, f, gain, limit_bw, ref_bw):
    # Independent route: field strength -> power density -> effective aperture.
    e_v = 10 ** ((e - 120.0) / 20.0)  # V/m
    s = e_v**2 / (120 * math.pi)  # W/m^2
    lam = 299_792_458.0 / f
    a_eff = 10 ** (gain / 10.0) * lam**2 / (4 * math.pi)
    p_dbm = 10 * math.log10(s * a_eff * 1e3)
    return p_dbm - 10 * math.log10(limit_bw / ref_bw)


def test_german_limit_at_three_and_a_half_gigahertz():
    p = field_strength_to_rx_power(32.0, 3.5e9, 0.0, 5e6, 30e3)
    assert p == pytest.approx(-138.30, abs=0.005)
    assert abs(p - -138.0) <= 0.5


@pytest.mark.parametrize("f", [7e8, 3.5e9, 3.55e9, 2.6e10])
def test_conversion_matches_aperture_oracle(f):
    # The 77.2 dB constant is the rounded value of the physics; agreement to 0.02 dB.
    got = field_strength_to_rx_power(32.0, f, 2.0, 5e6, 30e3)
    assert got == pytest.approx(_oracle_rx_power(32.0, f, 2.0, 5e6, 30e3), abs=0.02)


def test_equal_bandwidths_add_nothing():
    a = field_strength_to_rx_power(40.0, 3.5e9, 0.0, 30e3, 30e3)
    assert a == pytest.approx(40.0 - 20 * math.log10(3500.0) - 77.2, abs=1e-12)


def test_gain_is_linear():
    a = field_strength_to_rx_power(32.0, 3.5e9, 0.0, 5e6, 30e3)
    b = field_strength_to_rx_power(32.0, 3.5e9, 3.0, 5e6, 30e3)
    assert b - a == pytest.approx(3.0, abs=1e-12)


finite = st.floats(-50, 150)


@given(finite, st.floats(0.01, 20), st.floats(1e8, 1e11), st.floats(1.01, 1e3))
def test_conversion_monotonicity(e, de, f, ratio):
    base = field_strength_to_rx_power(e, f, 0.0, 30e3 * ratio, 30e3)
    assert field_strength_to_rx_power(e + de, f, 0.0, 30e3 * ratio, 30e3) > base
    assert field_strength_to_rx_power(e, f, de, 30e3 * ratio, 30e3) > base
    assert field_strength_to_rx_power(e, f * 1.1, 0.0, 30e3 * ratio, 30e3) < base
    assert field_strength_to_rx_power(e, f, 0.0, 30e3 * ratio * 1.1, 30e3) < base


def test_conversion_rejects_nonpositive_inputs():
    with pytest.raises(ValueError):
        field_strength_to_rx_power(32.0, 0.0, 0.0, 5e6, 30e3)


def test_desensitization_examples():
    assert inr_to_desensitization(-6.0) == pytest.approx(0.9732, abs=1e-4)
    assert inr_to_desensitization(-math.inf) == 0.0
    assert inr_to_desensitization(0.0) == pytest.approx(10 * math.log10(2.0), abs=1e-12)
    assert inr_to_desensitization(0.0) == pytest.approx(3.01, abs=0.005)


@given(st.floats(-60, 60), st.floats(0.01, 10))
def test_desensitization_monotone_and_asymptotic(inr, step):
    assert inr_to_desensitization(inr + step) > inr_to_desensitization(inr)
    assert inr_to_desensitization(inr) > max(inr, 0.0) - 1e-12


def test_desensitization_limits():
    assert inr_to_desensitization(-80.0) < 1e-7
    assert inr_to_desensitization(60.0) == pytest.approx(60.0, abs=1e-5)


def test_all_pass_with_ten_db_margin():
    lim = limit_to_dbm(GERMANY, 3.55e9)
    rep = evaluate([fused(10 + k, lim - 10.0) for k in range(5)], GERMANY, -140.0)
    assert rep.counts == {PASS: 5, FAIL: 0, BELOW_FLOOR: 0}
    assert rep.min_margin == pytest.approx(10.0)


def test_one_violation_is_the_worst_case():
    lim = limit_to_dbm(GERMANY, 3.55e9)
    samples = [fused(10, lim - 5.0, t=0.0), fused(20, lim + 2.0, t=1.0), fused(30, lim - 1.0, t=2.0)]
    rep = evaluate(samples, GERMANY, -140.0)
    assert rep.counts[FAIL] == 1
    doc = rep.to_dict()
    assert doc["worst_case"]["index"] == 1 and doc["worst_case"]["x_m"] == 20
    assert doc["worst_case"]["margin_db"] == pytest.approx(-2.0)


def test_measurement_floor_above_limit():
    samples = [fused(10, -120.0), fused(20, -139.0)]
    normal = evaluate(samples, GERMANY, -140.0, carrier=3.5e9)
    assert not normal.measurement_insufficient
    assert normal.verdicts == (FAIL, PASS)
    floor = evaluate(samples, GERMANY, -135.0, carrier=3.5e9)
    assert floor.measurement_insufficient
    assert floor.verdicts == (BELOW_FLOOR, BELOW_FLOOR)
    assert floor.to_dict()["worst_case"] is None


@given(st.lists(st.floats(-200, 0), max_size=40), st.sampled_from([None, -140.0, -135.0]))
def test_verdict_counts_sum(levels, censor):
    rep = evaluate([fused(5 + k, r) for k, r in enumerate(levels)], GERMANY, censor)
    assert sum(rep.counts.values()) == len(levels)
    for v, m in zip(rep.verdicts, rep.margins):
        assert (v == BELOW_FLOOR) == (m is None)


def test_strict_height_window():
    samples = [fused(10, -150.0, z=2.5), fused(10, -150.0, z=4.0), fused(10, -150.0, z=4.2)]
    assert len(evaluate(samples, GERMANY, None, strict_height=True).verdicts) == 2
    assert len(evaluate(samples, GERMANY, None).verdicts) == 3


def test_presets_and_limit_files():
    g = preset("germany")
    assert g == GERMANY
    assert limit_to_dbm(g, 3.55e9) == pytest.approx(-138.42, abs=0.005)
    o = preset("ofcom_inr")
    assert o.kind == "inr" and o.value == -6.0
    with pytest.raises(ValueError, match="cannot be evaluated"):
        limit_to_dbm(o, 3.55e9)
    assert load_limit(limit_to_json(g)) == g
    with pytest.raises(ValueError, match="keys"):
        load_limit(json.dumps({"kind": "inr", "value": -6}))
    with pytest.raises(ValueError, match="unknown"):
        preset("mars")


def test_rx_power_limit_kind():
    lim = RegulatoryLimit("rx_power", -100.0, 3e6)
    assert limit_to_dbm(lim, 3.5e9) == pytest.approx(-120.0)
