"""Hybrid sheaf data ``H = (V, G)`` and their realization as interval sheaves.

``gamma`` turns a graph into a datum whose flows are ``vertex × Yon_τ``:
a vertex flow carries its label together with a phase in ``[0, τ]``, and
every graph edge becomes a jump from phase τ to phase 0. The presheaf H̄ has
bare edges as 0-sections and triples ``(e0, v, eℓ)`` satisfying the pullback
condition as ℓ-sections; :class:`RealizedSheaf` is its sheafification, whose
sections are canonical :class:`~intsheaf.sections.HybridSection` values.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Hashable, Mapping, Sequence

from .graphs import Graph
from .intervals import TranslationMap, duration, window
from .sections import (
    FlowCell,
    HybridSection,
    JumpEdge,
    MalformedSection,
    SymbolicConstant,
    canonicalize,
    glue,
    identity_edge,
    restrict,
)


class NotAMember(ValueError):
    pass


@dataclass(frozen=True)
class YonedaSheaf:
    """``Yon_τ``: an ℓ-section is a start phase p with ``p + ℓ <= τ``."""

    period: Fraction

    def __post_init__(self):
        object.__setattr__(self, "period", duration(self.period))
        if self.period == 0:
            raise ValueError("period must be positive")

    def contains(self, phase, length) -> bool:
        phase, length = Fraction(phase), Fraction(length)
        return phase >= 0 and length >= 0 and phase + length <= self.period

    def is_empty(self, length) -> bool:
        return Fraction(length) > self.period


@dataclass(frozen=True)
class HybridSheafDatum:
    """Flows ``labels × Yon_τ``; jumps ``edge -> (src, τ) ⇝ (tgt, target_phase)``.

    Vertices of the reflexive graph are the points ``(label, phase)``; the
    identity loop at a vertex is the vertex itself (``ids(v) = v``).
    """

    labels: frozenset
    yon: YonedaSheaf
    edges: Mapping  # edge label -> (src vertex label, tgt vertex label)
    target_phase: Fraction = Fraction(0)

    @property
    def period(self) -> Fraction:
        return self.yon.period

    def is_vertex(self, point) -> bool:
        return (
            isinstance(point, tuple)
            and len(point) == 2
            and point[0] in self.labels
            and isinstance(point[1], (Fraction, int))
            and 0 <= point[1] <= self.period
        )

    def src(self, edge_label) -> tuple:
        return (self.edges[edge_label][0], self.period)

    def tgt(self, edge_label) -> tuple:
        return (self.edges[edge_label][1], self.target_phase)

    def jump(self, edge_label, time=0) -> JumpEdge:
        if edge_label not in self.edges:
            raise KeyError(f"no edge {edge_label!r} in the datum")
        return JumpEdge(edge_label, self.src(edge_label), self.tgt(edge_label), duration(time))

    def flow(self, label, phase=0) -> SymbolicConstant:
        return SymbolicConstant(label, duration(phase), self.period)

    def is_edge(self, e: JumpEdge) -> bool:
        if e.is_identity:
            return self.is_vertex(e.src)
        return e.label in self.edges and e.src == self.src(e.label) and e.tgt == self.tgt(e.label)

    def is_flow(self, cell: FlowCell) -> bool:
        f = cell.flow
        return (
            isinstance(f, SymbolicConstant)
            and f.period == self.period
            and f.label in self.labels
            and self.yon.contains(f.phase, cell.length)
        )


def gamma(g: Graph, period, target_phase=0) -> HybridSheafDatum:
    """Γ: the hybrid datum of a graph with τ-periodic jumps."""
    yon = YonedaSheaf(duration(period))
    edges = {e.id: (e.src, e.tgt) for e in g.edges}
    return HybridSheafDatum(frozenset(g.vertices), yon, edges, duration(target_phase))


# -- the presheaf H̄ --------------------------------------------------------


def presheaf_member(H: HybridSheafDatum, candidate: HybridSection, length=None) -> bool:
    """Pullback condition: ``(tgt(e0), src(eℓ)) = (λ0(v), ρ0(v))``; bare edges at ℓ = 0."""
    if length is not None and Fraction(length) != candidate.length:
        return False
    if len(candidate.cells) == 0:
        return H.is_edge(candidate.edges[0])
    if len(candidate.cells) != 1:
        return False
    e0, eL = candidate.edges
    cell = candidate.cells[0]
    if cell.length == 0 or not H.is_flow(cell):
        return False
    return H.is_edge(e0) and H.is_edge(eL) and e0.tgt == cell.left and eL.src == cell.right


def presheaf_triple(H: HybridSheafDatum, e0: JumpEdge, cell: FlowCell, eL: JumpEdge) -> HybridSection:
    """Assemble ``(e0, v, eℓ)``; raises when the pullback condition fails."""
    try:
        s = HybridSection((e0, eL), (cell,))
    except MalformedSection as exc:
        raise NotAMember(str(exc)) from exc
    if not presheaf_member(H, s):
        raise NotAMember(f"({e0.describe()}, v, {eL.describe()}) is not a section of H-bar")
    return s


def presheaf_restrict(H: HybridSheafDatum, s: HybridSection, t: TranslationMap) -> HybridSection:
    """H̄(Tr_p) by its case table; independent of the general restriction code."""
    if not presheaf_member(H, s):
        raise NotAMember(f"{s!r} is not a section of H-bar")
    if t.target_len != s.length:
        raise ValueError(f"{t!r} does not apply to a section of length {s.length}")
    if t.is_identity():
        return s
    p, q = window(t)
    e0, eL = s.edges
    v = s.cells[0]
    if t.source_len == 0:
        if p == 0:
            return HybridSection((e0.at(0),))
        if q == 0:
            return HybridSection((eL.at(0),))
        return HybridSection((identity_edge(v.point(p)),))
    piece = v.restrict(p, p + t.source_len)
    left = e0 if p == 0 else identity_edge(piece.left)
    right = eL if q == 0 else identity_edge(piece.right)
    return HybridSection((left, right), (piece,))


# -- realization -------------------------------------------------------------


class RealizedSheaf:
    """``R(H) = asSh(H̄)``: canonical sections whose every cell is an H̄-triple."""

    def __init__(self, datum: HybridSheafDatum):
        self.datum = datum

    def triples(self, s: HybridSection) -> list[HybridSection]:
        return [HybridSection((s.edges[i], s.edges[i + 1]), (c,)) for i, c in enumerate(s.cells)]

    def member(self, s: HybridSection) -> bool:
        try:
            c = canonicalize(s)
        except MalformedSection:
            return False
        if not c.cells:
            return self.datum.is_edge(c.edges[0])
        return all(presheaf_member(self.datum, x) for x in self.triples(c))

    def require(self, s: HybridSection) -> HybridSection:
        if not self.member(s):
            raise NotAMember(f"{s!r} is not a section of the realized sheaf")
        return canonicalize(s)

    def restrict(self, s: HybridSection, t: TranslationMap) -> HybridSection:
        return restrict(self.require(s), t)

    def glue(self, s1: HybridSection, s2: HybridSection) -> HybridSection:
        return glue(self.require(s1), self.require(s2))

    def periodic(self, jumps, start_label=None, start_phase=0, tail=None, final_jump=None) -> HybridSection:
        return periodic_section(self.datum, jumps, start_label, start_phase, tail, final_jump)


def realize(H: HybridSheafDatum) -> RealizedSheaf:
    return RealizedSheaf(H)


def periodic_section(
    H: HybridSheafDatum,
    jumps: Sequence[Hashable],
    start_label=None,
    start_phase=0,
    tail=None,
    final_jump: Hashable | None = None,
) -> HybridSection:
    """Build a τ-periodic section.

    With ``start_label`` None the section opens with ``jumps[0]`` at time 0
    and each later jump fires one period after the previous. Otherwise it
    opens with an identity edge at ``(start_label, start_phase)`` and the
    first jump fires when the phase reaches τ. The section ends with an
    identity edge ``tail`` after the last jump (default: the rest of that
    period), or with ``final_jump`` one period after the last jump.
    """
    tau = H.period
    start_phase = duration(start_phase)
    items: list = []
    jumps = list(jumps)
    if start_label is None:
        if not jumps:
            raise ValueError("need a start label or at least one jump")
        first = H.jump(jumps.pop(0))
        items.append(first)
        label, phase = H.edges[first.label][1], H.target_phase
    else:
        label, phase = start_label, start_phase
        items.append(identity_edge((label, phase)))
    for lam in jumps:
        items.append(FlowCell(tau - phase, H.flow(label, phase)))
        edge = H.jump(lam)
        if H.edges[lam][0] != label:
            raise NotAMember(f"jump {lam!r} does not leave {label!r}")
        items.append(edge)
        label, phase = H.edges[lam][1], H.target_phase
    if final_jump is not None:
        items.append(FlowCell(tau - phase, H.flow(label, phase)))
        if H.edges[final_jump][0] != label:
            raise NotAMember(f"jump {final_jump!r} does not leave {label!r}")
        items.append(H.jump(final_jump))
    else:
        tail = tau - phase if tail is None else duration(tail)
        if tail:
            if phase + tail > tau:
                raise NotAMember("tail overruns the period")
            items.append(FlowCell(tail, H.flow(label, phase)))
            items.append(identity_edge((label, phase + tail)))
    return canonicalize(HybridSection(tuple(items[0::2]), tuple(items[1::2])))
