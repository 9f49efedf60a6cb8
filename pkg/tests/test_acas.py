import json
import random
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from intsheaf.acas import (
    AcasParams,
    AircraftParams,
    ScenarioError,
    aircraft_cds,
    aircraft_matrices,
    build_acas_lts,
    build_pair,
    channels_from_sections,
    contract_report,
    guard_label,
    human_phi,
    kinematic_cds,
    load_aircraft_library,
    load_scenario,
    run_scenario,
    scenario_from_dict,
    steady_pitch_rate,
)
from intsheaf.graphs import complete_graph
from intsheaf.hybrid import gamma
from intsheaf.machines import CDSMachine, MappingError, held_input
from intsheaf.sections import FlowCell, HybridSection, SymbolicConstant, constant_section, identity_edge

from builders import behaviour_violations, random_scenario
from oracles import navion_matrices, rk4_dense, steady_q

P = AcasParams(100.0, 0.01, 1)
NAVION = load_aircraft_library()["navion"]


def scenario(**over):
    d = {
        "name": "t",
        "acas": {"delta": 100.0, "delta_bar": 0.01, "tau": "1"},
        "aircraft": [
            {"name": "ac1", "altitude": 1000.0, "maneuver": "level"},
            {"name": "ac2", "altitude": 2000.0, "maneuver": "level"},
        ],
        "horizon": "10",
    }
    d.update(over)
    return scenario_from_dict(d)


# -- guards ----------------------------------------------------------------------------


@pytest.mark.parametrize(
    "state,own,other,intent,first,label",
    [
        ("level", 1000.0, 900.0, "level", True, "l1"),  # boundary: |ΔA| = δ
        ("level", 1000.0, 950.0, "climb", True, "l2"),
        ("level", 1000.0, 950.0, "descend", True, "l3"),
        ("climb", 1000.0, 1200.0, "level", True, "l4"),
        ("descend", 1000.0, 1200.0, "level", True, "l5"),
        ("climb", 1000.0, 900.0, "level", True, "l4"),
        ("level", 1000.0, 950.0, "level", True, "l3"),  # higher climbs
        ("level", 950.0, 1000.0, "level", True, "l2"),
        ("level", 1000.0, 1000.0, "level", True, "l3"),  # exact tie: the first climbs
        ("level", 1000.0, 1000.0, "level", False, "l2"),
    ],
)
def test_guard_table(state, own, other, intent, first, label):
    assert guard_label(P, state, own, other, intent, first) == label


def test_guards_then_transitions():
    spec = build_acas_lts(P)
    assert spec.step(guard_label(P, "level", 1000.0, 900.0, "level", True), "level") == "level"
    assert spec.step(guard_label(P, "level", 1000.0, 950.0, "climb", True), "level") == "descend"
    assert spec.step(guard_label(P, "climb", 1000.0, 1101.0, "level", True), "climb") == "level"


def test_level_conflict_is_complementary():
    for own, other in ((1000.0, 950.0), (950.0, 1000.0), (1000.0, 1000.0)):
        a = guard_label(P, "level", own, other, "level", True)
        b = guard_label(P, "level", other, own, "level", False)
        assert {a, b} == {"l2", "l3"}


def test_params_must_be_positive():
    with pytest.raises(ScenarioError):
        AcasParams(0.0, 0.01, 1)
    with pytest.raises(ScenarioError):
        AcasParams(100.0, 0.01, 0)


# -- the human map -------------------------------------------------------------------------


def test_phi_cells_and_pairs():
    phi = human_phi(0.01)
    H = gamma(complete_graph(["level", "climb", "descend"]), 1)
    s = HybridSection((H.jump(("descend", "level")), identity_edge(("level", Fraction(1, 2)))),
                      (FlowCell(Fraction(1, 2), H.flow("level", 0)),))
    out = phi(s)
    assert out.edges[0].label == (-0.01, 0.0)
    assert out.cells[0].flow == SymbolicConstant(0.0, 0, 1)
    t = HybridSection((H.jump(("level", "level")), identity_edge(("level", 1))), (FlowCell(1, H.flow("level", 0)),))
    assert phi(t).edges[0].label == (0.0, 0.0)
    d = constant_section(SymbolicConstant("descend", Fraction(1, 4), 1), Fraction(1, 2))
    assert phi(d).cells[0].flow == SymbolicConstant(-0.01, Fraction(1, 4), 1)


def test_phi_rejects_unknown_labels():
    with pytest.raises(MappingError):
        human_phi(0.01)(constant_section(SymbolicConstant("loop", 0, 1), 1))


# -- aircraft -------------------------------------------------------------------------------


def test_matrices_match_the_hand_written_model():
    A, B, C = aircraft_matrices(NAVION)
    A0, B0 = navion_matrices()
    assert np.array_equal(A, np.array(A0)) and np.array_equal(B, np.array(B0))
    assert list(A[2]) == [0.0, 1.0, 0.0, 0.0]
    assert list(C[0]) == [0.0, 0.0, 0.0, 1.0]


def test_steady_pitch_rate():
    assert steady_pitch_rate(NAVION, 0.01) == pytest.approx(steady_q(0.01), rel=1e-12)
    assert steady_pitch_rate(NAVION, 0.01) == pytest.approx(0.015294116903553617, rel=1e-12)


def test_zero_input_zero_state_stays_zero():
    m = CDSMachine(aircraft_cds(NAVION))
    s = m.execute(held_input([(0.0,)], [5]))
    for _, x in m.tabulate(s):
        assert x == (0.0, 0.0, 0.0, 0.0)


def test_step_deflection_raises_altitude_monotonically():
    m = CDSMachine(aircraft_cds(NAVION, altitude=500.0), Fraction(1, 10))
    s = m.execute(held_input([(0.01,)], [1]))
    A, B = navion_matrices()
    ref = rk4_dense(A, B, [0.0, 0.0, 0.0, 500.0], [0.01], 1, Fraction(1, 1000))
    hs = [x[3] for _, x in m.tabulate(s, Fraction(1, 100))]
    assert all(b >= a for a, b in zip(hs, hs[1:]))
    assert hs[-1] > 500.0
    assert hs[-1] == pytest.approx(ref[-1][3], rel=1e-9)


def test_aircraft_parameters_are_checked():
    with pytest.raises(ScenarioError):
        replace(NAVION, U0=0.0)
    with pytest.raises(ScenarioError):
        replace(NAVION, M_q=float("nan"))


def test_kinematic_aircraft_commands_pitch_rate():
    cds = kinematic_cds(NAVION, P, altitude=100.0)
    m = CDSMachine(cds)
    s = m.execute(held_input([(0.01,)], [2]))
    rate = abs(steady_q(0.01))
    theta, h = s.point_at(2, "left")[1]
    assert theta == pytest.approx(2 * rate, rel=1e-12)
    assert h == pytest.approx(100.0 + NAVION.speed * rate * 2.0, rel=1e-12)


# -- scenarios -------------------------------------------------------------------------------


def test_level_scenario_issues_no_advisory():
    r = run_scenario(load_scenario("acas_level"))
    for a in r.scenario.aircraft:
        labels = {c.flow.label for c in r.sections[f"{a.name}/pilot"].cells}
        assert labels == {"level"}
    assert r.compatible and r.holds()


def test_close_climber_descends_at_the_first_sample():
    sc = scenario(aircraft=[
        {"name": "ac1", "altitude": 1000.0, "maneuver": "climb"},
        {"name": "ac2", "altitude": 1050.0, "maneuver": "level"},
    ], horizon="2")
    r = run_scenario(sc, contracts=False)
    logic = r.sections["ac1/logic"]
    first = logic.jumps()[0]
    assert first.time == 0 and first.label == ("l2", "level")
    pilot = r.sections["ac1/pilot"]
    assert pilot.point_at(0, "right")[0] == "descend"
    plane_in = r.machine.boxes["ac1"].boxes["plane"].p_i(r.sections["ac1/plane"])
    assert plane_in.point_at(0, "right")[0] == (-0.01,)
    # hand-folded: ac2 is higher with level intent, so it climbs
    assert r.sections["ac2/pilot"].point_at(0, "right")[0] == "climb"
    assert behaviour_violations(r) == []


def test_nominal_run():
    r = run_scenario(load_scenario("acas_nominal"))
    assert r.compatible
    for name, lab in (("ac1", "climb"), ("ac2", "descend")):
        pilot = r.sections[f"{name}/pilot"]
        assert pilot.point_at(37, "right")[0] == "level"
        assert pilot.point_at(38, "right")[0] == lab
        assert pilot.point_at(42, "right")[0] == "level"
    strict = r.contracts["strict"][0]
    assert not strict.holds and strict.witness == (Fraction(421, 10), Fraction(211, 5))
    assert all(b.holds for b in r.contracts["band"])
    assert r.holds()
    assert behaviour_violations(r) == []


def test_kinematic_run_satisfies_the_strict_contract():
    r = run_scenario(load_scenario("acas_kinematic"))
    assert r.contracts["strict"][0].holds
    assert r.contracts["operational"] == r.contracts["strict"]


@pytest.mark.parametrize("seed", range(8))
def test_random_scenarios_behave(seed):
    sc = random_scenario(random.Random(seed))
    r = run_scenario(sc, contracts=False)
    assert r.compatible
    assert behaviour_violations(r) == []


@pytest.mark.parametrize("grouping", ["left", "right"])
def test_grouping_gives_the_same_run(grouping):
    sc = load_scenario("acas_nominal").with_horizon(45)
    flat = run_scenario(sc, contracts=False).sections
    other = run_scenario(sc, grouping=grouping, contracts=False).sections

    def leaves(secs):
        return {(k.split("/")[0], k.split("/")[-1]): v for k, v in secs.items()}

    a, b = leaves(flat), leaves(other)
    assert set(a) == set(b)
    for key in a:
        assert a[key].equals(b[key], 1e-9), key


def test_report_sections_roundtrip_into_channels():
    sc = load_scenario("acas_nominal").with_horizon(45)
    r = run_scenario(sc, contracts=False)
    chans = channels_from_sections(sc, r.sections)
    assert {"ac1.P", "ac1.theta", "ac1.h", "ac2.defl"} <= set(chans)
    report = contract_report(sc, r.sections)
    assert set(report) == {"strict", "band", "operational"}


def test_pair_has_two_samplers():
    cm = build_pair(load_scenario("acas_nominal"))
    assert sorted(cm.samplers()) == ["guard1", "guard2"]
    assert cm.schedule() == ["ac1", "ac2"]


# -- scenario files -----------------------------------------------------------------------------


def test_horizon_must_be_a_multiple_of_tau():
    with pytest.raises(ScenarioError, match="multiple"):
        scenario(horizon="5/2")
    with pytest.raises(ScenarioError, match="multiple"):
        load_scenario("acas_nominal").with_horizon(Fraction(5, 2))


@pytest.mark.parametrize(
    "over,needle",
    [
        ({"aircraft": [{"name": "a", "altitude": 1.0}]}, "exactly two"),
        ({"aircraft": [{"name": "a", "altitude": 1.0}, {"name": "a", "altitude": 2.0}]}, "differ"),
        ({"aircraft": [{"name": "a", "altitude": 1.0, "maneuver": "loop"}, {"name": "b", "altitude": 2.0}]}, "maneuver"),
        ({"aircraft": [{"name": "a", "altitude": 1.0, "model": "x"}, {"name": "b", "altitude": 2.0}]}, "model"),
        ({"dynamics": "magic"}, "dynamics"),
        ({"acas": {"delta": 100.0, "delta_bar": 0.01}}, "tau"),
        ({"horizon": "soon"}, "bad scenario value"),
    ],
)
def test_bad_scenarios(over, needle):
    with pytest.raises(ScenarioError, match=needle):
        scenario(**over)


def test_scenario_files(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(load_scenario("acas_nominal").to_dict()))
    assert load_scenario(str(p)) == load_scenario("acas_nominal")
    p.write_text('{"name": "x",\n  "acas": }')
    with pytest.raises(ScenarioError, match="line 2"):
        load_scenario(str(p))
    with pytest.raises(ScenarioError, match="no scenario"):
        load_scenario("no_such_scenario")
    with pytest.raises(ScenarioError, match="cannot read"):
        load_scenario(str(tmp_path / "missing.json"))
