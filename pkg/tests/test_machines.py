import random
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intsheaf.acas import AcasParams, aircraft_cds, build_acas_lts, human_phi, load_aircraft_library
from intsheaf.graphs import STAR
from intsheaf.hybrid import periodic_section
from intsheaf.intervals import sub_interval
from intsheaf.linsys import LinearSystem, NumericFailure
from intsheaf.machines import (
    CDSMachine,
    LinearCDS,
    LTSMachine,
    LTSSpec,
    MapMachine,
    MappingError,
    SpecError,
    dump_cds,
    dump_lts,
    held_input,
    hold_morphism,
    identity_machine,
    parse_cds,
    parse_lts,
)
from intsheaf.sections import (
    FlowCell,
    HybridSection,
    SampledTrajectory,
    SymbolicConstant,
    constant_section,
    glue,
    identity_edge,
    restrict,
    restrict_to,
)

from oracles import ACAS_T, lts_run, navion_matrices, rk4

LABELS = ["l1", "l2", "l3", "l4", "l5"]
TAU = Fraction(1)


def acas_machine():
    return LTSMachine(build_acas_lts(AcasParams(100.0, 0.01, TAU)))


def late_input(m, labels):
    """Labels firing at τ, 2τ, ... (nothing at 0)."""
    return periodic_section(m.input_datum, labels, start_label=STAR)


# -- LTS -------------------------------------------------------------------------


def test_spec_matches_the_transition_table():
    spec = build_acas_lts(AcasParams(100.0, 0.01, TAU))
    assert spec.transitions == ACAS_T
    assert spec.initial == "level"
    assert all(spec.output[s] == s for s in spec.states)


def test_p_o_of_a_transition():
    m = acas_machine()
    state = m.execute(late_input(m, ["l3"]))
    jump = state.jumps()[0]
    assert jump.label == ("l3", "level") and jump.time == TAU
    out = m.p_o(state).jumps()[0]
    assert out.label == ("level", "climb") and out.time == TAU
    assert out.src == ("level", TAU) and out.tgt == ("climb", 0)


def test_p_i_forgets_the_state_and_keeps_the_phase():
    m = acas_machine()
    cell = FlowCell(Fraction(1, 2), SymbolicConstant("climb", Fraction(1, 4), TAU))
    s = HybridSection((identity_edge(("climb", Fraction(1, 4))), identity_edge(("climb", Fraction(3, 4)))), (cell,))
    pi = m.p_i(s)
    assert pi.cells[0].flow == SymbolicConstant(STAR, Fraction(1, 4), TAU)


def test_executor_follows_the_fold():
    m = acas_machine()
    labels = ["l3", "l3", "l4"]
    state = m.execute(late_input(m, labels))
    visited = [state.point_at(k * TAU, "right")[0] for k in range(len(labels) + 1)]
    assert visited == lts_run(ACAS_T, "level", labels) == ["level", "climb", "climb", "level"]
    assert all(isinstance(c.flow, SymbolicConstant) for c in state.cells)


def test_labels_outside_the_domain_stay_put():
    m = acas_machine()
    state = m.execute(late_input(m, ["l4", "l5", "l1"]))
    assert {c.flow.label for c in state.cells} == {"level"}
    assert [e.label for e in state.jumps()] == [("l4", "level"), ("l5", "level"), ("l1", "level")]
    assert len(m.transition_graph.edges) == 9


def test_horizon_is_truncated_to_whole_periods():
    m = acas_machine()
    u = late_input(m, ["l1", "l1"])
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        state = m.execute(u, horizon=Fraction(5, 2))
    assert state.length == 2 and w


def test_horizon_zero():
    m = acas_machine()
    state = m.execute(m.input_section(["l2"]), horizon=0)
    assert state.length == 0 and len(state.edges) == 1


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(LABELS), min_size=1, max_size=10))
def test_executor_soundness(labels):
    m = acas_machine()
    u = m.input_section(labels)
    state = m.execute(u)
    assert m.is_state(state)
    assert m.p_i(state) == u
    out = m.p_o(state)
    assert m.output_sheaf.member(out)
    path = lts_run(ACAS_T, "level", labels)
    for k, e in enumerate(out.jumps()):
        assert e.label == (path[k], path[k + 1])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(LABELS), min_size=2, max_size=8), st.data())
def test_legs_commute_with_restriction_and_gluing(labels, data):
    m = acas_machine()
    state = m.execute(m.input_section(labels))
    pts = [Fraction(k, 4) for k in range(int(state.length * 4) + 1)]
    a = data.draw(st.sampled_from(pts))
    b = data.draw(st.sampled_from([p for p in pts if p >= a]))
    t = sub_interval(a, b, state.length)
    for leg in (m.p_i, m.p_o):
        assert leg(restrict(state, t)) == restrict(leg(state), t)
    c = data.draw(st.sampled_from(pts))
    left, right = restrict_to(state, 0, c), restrict_to(state, c, state.length)
    for leg in (m.p_i, m.p_o):
        assert leg(glue(left, right)) == glue(leg(left), leg(right))


def test_lts_text_roundtrip():
    spec = build_acas_lts(AcasParams(100.0, 0.01, Fraction(1, 2)))
    text = dump_lts(spec)
    assert parse_lts(text) == spec
    assert dump_lts(parse_lts(text)) == text


@pytest.mark.parametrize(
    "text,needle",
    [
        ("states: a\ninitial: b\ninputs: x\noutputs: o\nperiod: 1\noutput a o\n", "initial"),
        ("states: a\ninitial: a\ninputs: x\noutputs: o\nperiod: 1\ntransition x a\n", "line 6"),
        ("states: a\ninitial: a\ninputs: x\noutputs: o\nperiod: 0\noutput a o\n", "period"),
        ("states: a\ninitial: a\ninputs: x\noutputs: o\nperiod: 1\n", "output map"),
        ("bogus line\n", "line 1"),
    ],
)
def test_lts_errors(text, needle):
    with pytest.raises(SpecError, match=needle):
        parse_lts(text)


def test_partial_spec_is_accepted():
    spec = LTSSpec(["a", "b"], "a", ["x"], ["o"], {("x", "a"): "b"}, {"a": "o", "b": "o"}, 1)
    assert spec.run(["x", "x"]) == ["a", "b", "b"]


# -- CDS -------------------------------------------------------------------------


def test_zero_dynamics_hold_the_state():
    cds = LinearCDS.from_matrices([[0.0, 0.0], [0.0, 0.0]], [[0.0], [0.0]], x0=[1.5, -2.0])
    m = CDSMachine(cds)
    state = m.execute(held_input([(3.0,), (-1.0,)], [1, 2]))
    for _, x in m.tabulate(state):
        assert x == (1.5, -2.0)


def test_pure_integrator():
    cds = LinearCDS.from_matrices([[0.0]], [[1.0]], x0=[2.0])
    state = CDSMachine(cds).execute(held_input([(0.01,)], [1]))
    assert state.point_at(1, "left")[1][0] == pytest.approx(2.01, abs=1e-15)


def test_aircraft_matches_rk4():
    p = load_aircraft_library()["navion"]
    cds = aircraft_cds(p, altitude=1000.0)
    m = CDSMachine(cds, Fraction(1, 10))
    rng = random.Random(3)
    pieces = [(Fraction(rng.randint(1, 4)), (rng.choice([-0.01, 0.0, 0.01]),)) for _ in range(8)]
    state = m.execute(held_input([u for _, u in pieces], [d for d, _ in pieces]))
    A, B = navion_matrices()
    ref = rk4(A, B, cds.x0, pieces, Fraction(1, 1000))
    t = Fraction(0)
    for (d, _), x_ref in zip(pieces, ref[1:]):
        t += d
        x = np.array(state.point_at(t, "left")[1])
        assert np.max(np.abs(x - x_ref)) <= 1e-6 * max(1.0, np.max(np.abs(x_ref)))


def test_residual_of_executed_sections():
    p = load_aircraft_library()["navion"]
    m = CDSMachine(aircraft_cds(p, altitude=500.0), Fraction(1, 10))
    state = m.execute(held_input([(0.01,), (-0.01,), (0.0,)], [2, 3, 2]))
    h = 1e-4
    for i, cell in enumerate(state.cells):
        f = cell.flow
        for k in range(1, int(cell.length * 10)):
            t = Fraction(k, 10)
            fd = (f.state(t + Fraction(1, 10000)) - f.state(t - Fraction(1, 10000))) / (2 * h)
            rhs = m.system.derivative(f.state(t), f.u)
            assert np.allclose(fd, rhs, rtol=1e-4, atol=1e-8)


def test_output_is_c_times_state():
    p = load_aircraft_library()["navion"]
    m = CDSMachine(aircraft_cds(p, altitude=500.0))
    state = m.execute(held_input([(0.01,), (0.0,)], [2, 2]))
    y = m.p_o(state)
    for k in range(41):
        t = Fraction(k, 10)
        assert y.point_at(t)[0] == tuple(m.system.C @ np.array(state.point_at(t)[1]))


def test_cds_input_consistency():
    p = load_aircraft_library()["navion"]
    m = CDSMachine(aircraft_cds(p))
    u = held_input([(0.0,), (0.01,), (0.01,), (-0.01,)], [1, 1, 1, 2])
    state = m.execute(u)
    assert m.is_state(state)
    assert m.p_i(state) == u


def test_nonfinite_propagation_fails_loudly():
    cds = LinearCDS.from_matrices([[800.0]], [[1.0]], x0=[1.0])
    with pytest.raises(NumericFailure), warnings.catch_warnings():
        warnings.simplefilter("ignore")
        CDSMachine(cds).execute(held_input([(0.0,)], [10]))


def test_smooth_mode_runs_first_order_hold():
    cds = LinearCDS.from_matrices([[0.0]], [[1.0]], x0=[0.0], input_mode="smooth")
    m = CDSMachine(cds)
    ramp = SampledTrajectory([(0.0,), (1.0,), (2.0,)], 1)
    u = constant_section(ramp, 2)
    state = m.execute(u)
    assert state.point_at(2, "left")[1][0] == pytest.approx(2.0, abs=1e-12)
    assert m.p_i(state).equals(u, 0.0)


def test_cds_text_roundtrip():
    p = load_aircraft_library()["navion"]
    cds = aircraft_cds(p, altitude=1000.0, theta=0.05)
    text = dump_cds(cds)
    back = parse_cds(text)
    assert back.system == cds.system and back.x0 == cds.x0
    assert dump_cds(back) == text


@pytest.mark.parametrize(
    "text,needle",
    [
        ("dims: 2 1 1\nA: 1 2 3\nB: 0 1\nC: 1 0\n", "line 2"),
        ("A: 1\nB: 1\nC: 1\n", "dims"),
        ("dims: 1 1 1\nA: x\nB: 1\nC: 1\n", "decimal"),
        ("dims: 1 1 1\nA: 1\nB: 1\nC: 1\nmode: weird\n", "input mode"),
    ],
)
def test_cds_errors(text, needle):
    with pytest.raises(SpecError, match=needle):
        parse_cds(text)


# -- map machines ------------------------------------------------------------------


def test_phi_on_cells_and_transitions():
    phi = human_phi(0.01)
    cell = FlowCell(Fraction(1, 2), SymbolicConstant("climb", Fraction(1, 4), TAU))
    s = HybridSection((identity_edge(("climb", Fraction(1, 4))), identity_edge(("climb", Fraction(3, 4)))), (cell,))
    assert phi(s).cells[0].flow == SymbolicConstant(0.01, Fraction(1, 4), TAU)
    m = acas_machine()
    out = m.p_o(m.execute(late_input(m, ["l3"])))
    mapped = phi(out).jumps()[0]
    assert mapped.label == (0.0, 0.01) and mapped.time == TAU


def test_identity_map_machine():
    m = identity_machine("K")
    s = acas_machine().p_o(acas_machine().execute(acas_machine().input_section(["l3", "l4"])))
    assert m.p_o(s) == s and m.p_i(s) == s


def test_mapping_error_names_the_cell():
    m = MapMachine(human_phi(0.01))
    s = constant_section(SymbolicConstant("sideways", 0, TAU), Fraction(1, 2))
    with pytest.raises(MappingError, match="sideways"):
        m.p_o(s)
    assert not m.is_state(s)


def test_hold_turns_unchanged_values_into_identities():
    g = hold_morphism()
    phi = human_phi(0.01)
    m = acas_machine()
    out = phi(m.p_o(m.execute(m.input_section(["l1", "l3", "l3", "l4"]))))
    held = g(out)
    assert [e.label for e in held.jumps()] == ["switch", "switch"]
    assert [e.time for e in held.jumps()] == [1, 3]
