import itertools
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intsheaf.acas import AcasParams, build_acas_lts
from intsheaf.graphs import STAR, complete_graph, loop_graph, transition_graph
from intsheaf.hybrid import (
    NotAMember,
    YonedaSheaf,
    gamma,
    periodic_section,
    presheaf_member,
    presheaf_restrict,
    presheaf_triple,
    realize,
)
from intsheaf.intervals import sub_interval
from intsheaf.sections import (
    FlowCell,
    HybridSection,
    JumpEdge,
    MalformedSection,
    identity_edge,
    restrict,
)

TAU = Fraction(1)
LAMBDA = ["l1", "l2", "l3", "l4", "l5"]
OMEGA = ["level", "climb", "descend"]


def input_datum():
    return gamma(loop_graph(LAMBDA), TAU)


def output_datum():
    return gamma(complete_graph(OMEGA), TAU)


def test_gamma_of_loop_graph():
    H = input_datum()
    for lam in LAMBDA:
        assert H.src(lam) == (STAR, TAU)
        assert H.tgt(lam) == (STAR, 0)


def test_gamma_of_complete_graph():
    H = output_datum()
    for a, b in itertools.product(OMEGA, OMEGA):
        assert H.src((a, b)) == (a, TAU)
        assert H.tgt((a, b)) == (b, 0)


def test_gamma_of_transition_graph_targets_phase_zero():
    H = gamma(transition_graph(build_acas_lts(AcasParams(100.0, 0.01, 1))), TAU)
    assert H.tgt(("l3", "level")) == ("climb", 0)
    assert H.src(("l3", "level")) == ("level", TAU)


def test_gamma_needs_positive_period():
    with pytest.raises(ValueError):
        gamma(loop_graph(LAMBDA), 0)


def test_yoneda_is_empty_above_the_period():
    y = YonedaSheaf(TAU)
    assert y.contains(0, 1) and not y.contains(Fraction(1, 2), 1)
    assert y.is_empty(Fraction(3, 2))


def test_full_period_triple_is_a_member():
    H = input_datum()
    s = presheaf_triple(H, H.jump("l2"), FlowCell(TAU, H.flow(STAR, 0)), H.jump("l1"))
    assert presheaf_member(H, s, TAU)


def test_off_phase_flow_is_not_a_member():
    H = input_datum()
    with pytest.raises(NotAMember):
        presheaf_triple(H, H.jump("l2"), FlowCell(Fraction(1, 2), H.flow(STAR, Fraction(1, 2))), H.jump("l1"))


def test_bare_edge_is_a_zero_section():
    H = input_datum()
    assert presheaf_member(H, HybridSection((H.jump("l2"),)), 0)


def brute_pullback(H, e0, phase, length, eL):
    """Direct evaluation of (tgt e0, src eL) = (λ0 v, ρ0 v) on explicit tuples."""
    def tgt(e):
        return e[1] if e[0] == "id" else H.tgt(e[1])

    def src(e):
        return e[1] if e[0] == "id" else H.src(e[1])

    return (
        length > 0
        and phase + length <= H.period
        and tgt(e0) == (STAR, phase)
        and src(eL) == (STAR, phase + length)
    )


def test_membership_matches_brute_force_on_a_phase_grid():
    H = input_datum()
    grid = [Fraction(k, 4) for k in range(5)]
    edge_choices = [("jump", "l1")] + [("id", (STAR, p)) for p in grid]
    for e0, eL in itertools.product(edge_choices, edge_choices):
        for phase in grid:
            for length in grid:
                if length == 0 or phase + length > TAU:
                    continue
                expected = brute_pullback(H, e0, phase, length, eL)
                make = lambda e: H.jump(e[1]) if e[0] == "jump" else identity_edge(e[1])
                try:
                    s = HybridSection((make(e0), make(eL)), (FlowCell(length, H.flow(STAR, phase)),))
                except MalformedSection:
                    assert not expected
                    continue
                assert presheaf_member(H, s) == expected


def full_triple(H, first, label, last):
    return presheaf_triple(H, H.jump(first), FlowCell(TAU, H.flow(label, 0)), H.jump(last))


def test_input_restriction_interior():
    H = input_datum()
    s = full_triple(H, "l2", STAR, "l1")
    r = presheaf_restrict(H, s, sub_interval(Fraction(1, 4), Fraction(1, 2), TAU))
    assert r.edges[0] == identity_edge((STAR, Fraction(1, 4)))
    assert r.edges[1].is_identity and r.edges[1].src == (STAR, Fraction(1, 2))


def test_output_restriction_left_end():
    H = output_datum()
    s = full_triple(H, ("level", "climb"), "climb", ("climb", "level"))
    r = presheaf_restrict(H, s, sub_interval(0, Fraction(3, 4), TAU))
    assert r.edges[0] == H.jump(("level", "climb"))
    assert r.cells[0].flow.label == "climb" and r.cells[0].length == Fraction(3, 4)
    assert r.edges[1] == identity_edge(("climb", Fraction(3, 4)), Fraction(3, 4))


def test_restriction_by_identity_is_unchanged():
    H = output_datum()
    s = full_triple(H, ("level", "level"), "level", ("level", "climb"))
    assert presheaf_restrict(H, s, sub_interval(0, TAU, TAU)) == s


def test_restricting_a_non_member_fails():
    H = input_datum()
    s = HybridSection((identity_edge(("x",)),))
    with pytest.raises(NotAMember):
        presheaf_restrict(H, s, sub_interval(0, 0, 0))


@pytest.mark.parametrize("a", [Fraction(k, 4) for k in range(5)])
@pytest.mark.parametrize("b", [Fraction(k, 4) for k in range(5)])
def test_case_table_agrees_with_general_restriction(a, b):
    if b < a:
        return
    for H, first, label, last in (
        (input_datum(), "l2", STAR, "l5"),
        (output_datum(), ("climb", "level"), "level", ("level", "descend")),
    ):
        s = full_triple(H, first, label, last)
        t = sub_interval(a, b, TAU)
        assert presheaf_restrict(H, s, t) == restrict(s, t)


def test_two_periods_are_a_member():
    H = input_datum()
    R = realize(H)
    s = periodic_section(H, ["l1", "l2"], final_jump="l3")
    assert s.length == 2 * TAU and R.member(s)
    assert [e.time for e in s.jumps()] == [0, 1, 2]


def test_jumps_closer_than_a_period_are_not_a_member():
    H = input_datum()
    with pytest.raises(MalformedSection):
        HybridSection(
            (H.jump("l1"), H.jump("l2")),
            (FlowCell(Fraction(1, 2), H.flow(STAR, 0)),),
        )
    bad = HybridSection(
        (H.jump("l1"), identity_edge((STAR, Fraction(1, 2)))),
        (FlowCell(Fraction(1, 2), H.flow(STAR, 0)),),
    )
    assert realize(H).member(bad)
    assert not realize(H).member(
        HybridSection((JumpEdge("l1", (STAR, Fraction(1, 2)), (STAR, 0)), identity_edge((STAR, 1))),
                      (FlowCell(1, H.flow(STAR, 0)),))
    )


@pytest.mark.parametrize("phase,length", [(0, Fraction(1, 2)), (Fraction(1, 3), Fraction(2, 3)), (0, 1)])
def test_jumpless_short_sections_are_members(phase, length):
    H = input_datum()
    s = HybridSection(
        (identity_edge((STAR, phase)), identity_edge((STAR, phase + length))),
        (FlowCell(length, H.flow(STAR, phase)),),
    )
    assert realize(H).member(s)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(LAMBDA), min_size=1, max_size=8), st.data())
def test_input_jumps_sit_exactly_on_the_period_grid(labels, data):
    H = input_datum()
    s = periodic_section(H, labels)
    times = [e.time for e in s.jumps()]
    assert times == [k * TAU for k in range(len(labels))]
    a = data.draw(st.sampled_from([Fraction(k, 4) for k in range(int(s.length * 4) + 1)]))
    r = restrict(s, sub_interval(a, s.length, s.length))
    assert realize(H).member(r)
    assert all((a + e.time) % TAU == 0 for e in r.jumps())


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from(LAMBDA), min_size=2, max_size=6), st.integers(1, 5))
def test_realized_glue_and_restrict(labels, k):
    H = input_datum()
    R = realize(H)
    s = periodic_section(H, labels)
    cut = min(s.length, Fraction(k, 2))
    left = R.restrict(s, sub_interval(0, cut, s.length))
    right = R.restrict(s, sub_interval(cut, s.length, s.length))
    assert R.glue(left, right) == s
