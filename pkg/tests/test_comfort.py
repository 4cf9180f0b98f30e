import pytest
from hypothesis import given, settings, strategies as st

from drcap.binning import ControlSetting, ReferenceState, default_schema
from drcap.comfort import (
    ComfortTable,
    ControlCandidate,
    OccupancyComfort,
    UtilityFunction,
    delta_z,
    load_comfort,
    select_optimal_control,
    utility_eval,
)
from drcap.errors import ConfigError, InfeasibleControlError, InsufficientDataError, StateNotFoundError
from drcap.lookup import LookupEntry, LookupTable

SITES = load_comfort()
ZEB, ADSC = SITES["ZEB"], SITES["ADSC"]
HOUR = 3600.0
J_PER_KWH = 3.6e6


def test_utility_eval():
    fn = UtilityFunction("thermal", [(30, 0.1), (26, 0.9)])
    assert utility_eval(fn, 26) == 0.9
    assert utility_eval(fn, 40) == 0.1
    assert utility_eval(fn, 10) == 0.9
    assert utility_eval(fn, 28) == pytest.approx(0.5, abs=1e-15)


def test_utility_validation():
    with pytest.raises(ConfigError):
        UtilityFunction("thermal", [(26, 1.2)])
    with pytest.raises(ConfigError):
        UtilityFunction("sound", [(26, 0.5)])


def test_bundled_utilities_hit_table_points():
    assert ZEB.thermal(27) == 0.7 and ZEB.thermal(26) == 0.9 and ZEB.thermal(30) == 0.1
    assert ZEB.visual(500) == 0.7 and ZEB.visual(600) == 0.9 and ZEB.visual(0) == 0.1


@pytest.mark.parametrize("occ,label,power", [(1, "OFF", 0.0), (3, "ON", 1500.0)])
def test_zeb_thermal(occ, label, power):
    c = select_optimal_control(ZEB, occ, "hvac")
    assert (c.label, c.power_w) == (label, power)


def test_adsc_thermal_occ4():
    c = select_optimal_control(ADSC, 4, "hvac")
    assert (c.label, c.power_w) == ("26", 2778.0)


def test_tie_goes_to_declaration_order():
    # ADSC setpoints 30 and 27 both draw 0 W; 30 is declared first
    assert select_optimal_control(ADSC, 0, "hvac").label == "30"


def test_infeasible():
    strict = ZEB.with_u_min(thermal=[0.95] * 5)
    with pytest.raises(InfeasibleControlError) as info:
        select_optimal_control(strict, 2, "hvac")
    assert info.value.u_min == 0.95


def test_u_min_must_be_monotone():
    with pytest.raises(ConfigError):
        ZEB.with_u_min(thermal=[0.5, 0.4, 0.7, 0.8, 0.9])


def test_delta_z_zeb_occ1_comfort_defaults():
    dz = delta_z(None, ZEB, (1, 4, 1, 2, 3), HOUR, source="comfort")
    assert dz.total_j / J_PER_KWH == pytest.approx(1.636, abs=1e-12)
    assert dz.breakdown_j == {"hvac": 1500.0 * HOUR, "light": 136.0 * HOUR, "plug": 0.0}
    assert dz.context_match


def test_delta_z_zeb_occ4_visual_zero():
    dz = delta_z(None, ZEB, (1, 4, 4, 2, 3), HOUR, source="comfort")
    assert dz.breakdown_j["light"] == 0.0
    assert dz.optimal["light"].label == "600"


def test_no_curtailment_when_optimal_equals_default():
    comfort = ComfortTable("x", tuple(
        OccupancyComfort(0.1, 0.1, None, None,
                         (ControlCandidate("hvac", "A", 500.0, 24.0),),
                         (ControlCandidate("light", "L", 100.0, 600.0),))
        for _ in range(5)), default_power_w={"hvac": 500.0, "light": 100.0})
    assert delta_z(None, comfort, (1, 4, 2, 2, 3), HOUR).total_j == 0.0


def test_power_increase_is_floored():
    comfort = ComfortTable("x", tuple(
        OccupancyComfort(0.1, 0.1, None, None,
                         (ControlCandidate("hvac", "A", 900.0, 24.0),),
                         (ControlCandidate("light", "L", 10.0, 600.0),))
        for _ in range(5)), default_power_w={"hvac": 500.0, "light": 100.0})
    dz = delta_z(None, comfort, (1, 4, 2, 2, 3), HOUR)
    assert dz.breakdown_j["hvac"] == 0.0 and dz.breakdown_j["light"] == 90.0 * HOUR


def _table_with(hvac_w, light_w):
    e = LookupEntry(ReferenceState(1, 4, 2, 2, 3), 100, 1200.0, 200.0, ControlSetting("ON", "23"),
                    hvac_w=hvac_w, light_w=light_w, plug_w=1200.0 - (hvac_w or 0) - (light_w or 0))
    return LookupTable(default_schema(), {e.state: e})


def test_delta_z_sources():
    table = _table_with(660.0, 180.0)
    auto = delta_z(table, ZEB, (1, 4, 2, 2, 3), HOUR)
    assert auto.sources == {"hvac": "table", "light": "table"}
    assert auto.total_j == pytest.approx((660.0 + 180.0) * HOUR)
    forced = delta_z(table, ZEB, (1, 4, 2, 2, 3), HOUR, source="comfort")
    assert forced.total_j == pytest.approx(1636.0 * HOUR)

    no_meters = _table_with(None, None)
    assert delta_z(no_meters, ZEB, (1, 4, 2, 2, 3), HOUR).sources["hvac"] == "comfort"
    with pytest.raises(InsufficientDataError):
        delta_z(no_meters, ZEB, (1, 4, 2, 2, 3), HOUR, source="table")
    with pytest.raises(InsufficientDataError):
        delta_z(no_meters, ADSC, (1, 4, 2, 2, 3), HOUR)
    with pytest.raises(StateNotFoundError):
        delta_z(table, ZEB, (1, 4, 3, 2, 3), HOUR)


def test_alpha_must_be_positive():
    with pytest.raises(ConfigError):
        delta_z(None, ZEB, (1, 4, 1, 2, 3), 0.0, source="comfort")


def test_context_mismatch_flagged():
    assert not delta_z(None, ZEB, (0, 4, 1, 2, 3), HOUR, source="comfort").context_match


def test_comfort_json_round_trip(tmp_path):
    import json
    from importlib import resources
    data = json.loads(resources.files("drcap").joinpath("data/comfort.json").read_text())
    (tmp_path / "c.json").write_text(json.dumps(data["sites"]))
    sites = load_comfort(tmp_path / "c.json")
    assert sites["ZEB"] == ZEB


# properties

candidate = st.builds(
    lambda p, d: (p, d), st.floats(0, 5000, allow_nan=False), st.floats(20, 32, allow_nan=False))


def _random_table(cands, u_mins):
    hv = tuple(ControlCandidate("hvac", f"c{i}", p, d) for i, (p, d) in enumerate(cands))
    li = (ControlCandidate("light", "OFF", 0.0, 600.0),)
    states = tuple(OccupancyComfort(u, 0.1, None, None, hv, li) for u in u_mins)
    return ComfortTable("prop", states, default_power_w={"hvac": 5000.0, "light": 0.0})


u_seq = st.lists(st.floats(0, 1), min_size=5, max_size=5).map(sorted)


@settings(max_examples=150, deadline=None)
@given(st.lists(candidate, min_size=1, max_size=6), u_seq)
def test_feasibility_dominance(cands, u_mins):
    comfort = _random_table(cands, u_mins)
    for occ in range(5):
        try:
            best = select_optimal_control(comfort, occ, "hvac")
        except InfeasibleControlError:
            assert all(comfort.thermal(d) < u_mins[occ] for _, d in cands)
            continue
        assert comfort.thermal(best.delivered) >= u_mins[occ]
        for p, d in cands:
            if p < best.power_w:
                assert comfort.thermal(d) < u_mins[occ]


@settings(max_examples=150, deadline=None)
@given(st.lists(candidate, min_size=1, max_size=6), u_seq, st.floats(0, 0.5))
def test_raising_u_min_never_increases_delta_z(cands, u_mins, bump):
    low = _random_table(cands, u_mins)
    high = _random_table(cands, [min(1.0, u + bump) for u in u_mins])
    for occ in range(5):
        state = (1, 4, occ, 2, 3)
        try:
            dz_high = delta_z(None, high, state, HOUR).total_j
        except InfeasibleControlError:
            continue
        assert dz_high <= delta_z(None, low, state, HOUR).total_j


@settings(max_examples=100, deadline=None)
@given(st.floats(1.0, 1e5))
def test_delta_z_linear_in_alpha(alpha):
    a = delta_z(None, ZEB, (1, 4, 1, 2, 3), alpha, source="comfort").total_j
    b = delta_z(None, ZEB, (1, 4, 1, 2, 3), 2 * alpha, source="comfort").total_j
    assert b == pytest.approx(2 * a, rel=1e-15)


@pytest.mark.parametrize("site", ["ZEB", "ADSC"])
def test_delta_z_non_increasing_in_occupancy(site):
    comfort = SITES[site]
    defaults = {"hvac": 2778.0, "light": 136.0}
    comfort = ComfortTable(comfort.site, comfort.occ_states, comfort.thermal, comfort.visual,
                           comfort.context, defaults)
    values = [delta_z(None, comfort, (1, 4, o, 2, 3), HOUR).total_j for o in range(5)]
    assert all(b <= a for a, b in zip(values, values[1:]))
