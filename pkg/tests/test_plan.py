import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from npnkit.model import AntennaPattern, BuildingModel, route_from_xy
from npnkit.plan import (
    CampaignPlan,
    plan_from_json,
    plan_main_lobe,
    plan_roof,
    plan_side_lobe,
    plan_to_json,
    truncate_for_terrain,
)

BUILDING = BuildingModel((-40.0, -45.0, 20.0, 45.0), 10.0)
EAST = AntennaPattern(boresight_azimuth=90.0)


def test_main_lobe_one_route_per_height():
    routes = plan_main_lobe(BUILDING, EAST, [2, 4, 6, 8, 10, 12], standoff=10.0, length=100.0)
    assert len(routes) == 6
    assert [r.leg_altitude for r in routes] == [2, 4, 6, 8, 10, 12]
    xy = routes[0].xy()
    for r in routes:
        assert np.array_equal(r.xy(), xy)
        assert all(w.z == r.leg_altitude for w in r.waypoints)
    assert xy.tolist() == [[30.0, 50.0], [30.0, -50.0]]


def test_single_height():
    (r,) = plan_main_lobe(BUILDING, EAST, [5], standoff=10.0, length=100.0)
    assert r.leg_altitude == 5 and r.label == "main_lobe"


def test_east_boresight_gives_north_south_pass():
    (r,) = plan_main_lobe(BUILDING, EAST, [5], standoff=10.0, length=40.0)
    d = np.diff(r.xy(), axis=0)[0]
    assert d[0] == 0.0 and abs(d[1]) == 40.0


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 360), st.floats(2.5, 30), st.floats(5, 200))
def test_pass_is_orthogonal_to_boresight(az, standoff, length):
    # A 10 m square around the BS: any standoff beyond 5*(sqrt(2)-1) m clears every corner.
    small = BuildingModel((-5.0, -5.0, 5.0, 5.0), 6.0)
    (r,) = plan_main_lobe(small, AntennaPattern(boresight_azimuth=az), [5], standoff, length)
    d = np.diff(r.xy(), axis=0)[0]
    u = np.array([np.sin(np.radians(az)), np.cos(np.radians(az))])
    assert abs(d @ u) < 1e-6 * length
    assert r.length == pytest.approx(length)


def test_side_lobe_is_rotated_south():
    r = plan_side_lobe(BUILDING, EAST, 5.0, standoff=10.0, length=60.0)
    assert r.label == "side_lobe" and r.leg_altitude == 5.0
    assert r.xy().tolist() == [[30.0, -55.0], [-30.0, -55.0]]
    t = plan_side_lobe(BUILDING, EAST, 5.0, standoff=10.0, length=60.0, override_tail=5.0)
    assert t.length == pytest.approx(55.0)


def test_route_through_building_is_rejected():
    with pytest.raises(ValueError, match="intersects"):
        plan_main_lobe(BUILDING, AntennaPattern(boresight_azimuth=45.0), [5], standoff=1.0, length=300.0)


def test_truncate_empty_mask_is_identity():
    r = route_from_xy(1, [(0, 0), (100, 0)], 2.0, "main_lobe")
    assert truncate_for_terrain(r, []) == r


def test_truncate_final_thirty_percent():
    r = route_from_xy(1, [(0, 0), (100, 0)], 2.0, "main_lobe")
    t = truncate_for_terrain(r, [(70.0, 100.0)])
    assert t.length == pytest.approx(70.0)
    assert t.leg_altitude == 2.0


def _walk_prefix(xy, cut):
    """Arclength walk: vertices strictly before ``cut`` plus the interpolated cut point."""
    out = [tuple(xy[0])]
    acc = 0.0
    for a, b in zip(xy[:-1], xy[1:]):
        seg = float(np.hypot(*(b - a)))
        if acc + seg < cut:
            out.append(tuple(b))
            acc += seg
            continue
        f = (cut - acc) / seg
        out.append(tuple(a + f * (b - a)))
        break
    return out


def test_truncate_middle_mask_keeps_prefix():
    xy = np.array([(0.0, 0.0), (30.0, 0.0), (30.0, 40.0), (60.0, 40.0)])
    r = route_from_xy(1, xy, 4.0, "main_lobe")
    t = truncate_for_terrain(r, [(50.0, 60.0)])
    assert np.allclose(t.xy(), _walk_prefix(xy, 50.0))
    assert t.length == pytest.approx(50.0)


@given(st.floats(0.1, 99.9), st.floats(0.0, 1.0))
def test_truncate_matches_walk_oracle(lo, frac):
    xy = np.array([(0.0, 0.0), (20.0, 0.0), (20.0, 50.0), (50.0, 50.0)])
    r = route_from_xy(1, xy, 4.0, "main_lobe")
    hi = lo + frac * (r.length - lo)
    t = truncate_for_terrain(r, [(lo, hi)])
    assert np.allclose(t.xy(), _walk_prefix(xy, lo), atol=1e-9)


def test_truncate_errors():
    r = route_from_xy(1, [(0, 0), (100, 0)], 2.0, "main_lobe")
    with pytest.raises(ValueError, match="fully masked"):
        truncate_for_terrain(r, [(0.0, 10.0)])
    with pytest.raises(ValueError, match="outside"):
        truncate_for_terrain(r, [(90.0, 120.0)])


def test_roof_three_passes():
    routes = plan_roof(BUILDING, EAST, 18.0, 3)
    assert [r.id for r in routes] == [4, 5, 6]
    assert all(w.z == 18.0 for r in routes for w in r.waypoints)
    assert [r.xy()[0, 1] for r in routes] == [6.0, 0.0, -6.0]
    assert routes[1].xy().tolist() == [[-50.0, 0.0], [30.0, 0.0]]


def test_roof_single_centered_pass():
    (r,) = plan_roof(BUILDING, EAST, 18.0, 1, bs_xy=(0.0, 3.0))
    assert r.xy()[:, 1].tolist() == [3.0, 3.0]


def test_roof_must_clear_building():
    with pytest.raises(ValueError, match="roof"):
        plan_roof(BUILDING, EAST, 9.0, 3)


def test_plan_invariants_and_json_round_trip():
    with pytest.raises(ValueError):
        CampaignPlan(routes=(), heights_main=(2.0, 2.0))
    with pytest.raises(ValueError):
        CampaignPlan(routes=(), repeats=0)
    routes = plan_main_lobe(BUILDING, EAST, [2, 4], 10.0, 100.0) + plan_roof(BUILDING, EAST, 18.0, 2)
    plan = CampaignPlan(routes=tuple(routes), heights_main=(2.0, 4.0), origin=(61.0, 23.0, 100.0))
    text = plan_to_json(plan)
    assert plan_from_json(text) == plan
    assert plan_to_json(plan_from_json(text)) == text
    with pytest.raises(ValueError, match="malformed"):
        plan_from_json('{"routes": [{"id": 1}]}')
