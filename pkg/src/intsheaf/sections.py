"""Finite-length sections of realized interval sheaves.

A :class:`HybridSection` of length ℓ is an alternating list
``e0, v1, e1, ..., vn, en`` of jump edges and flow cells over an exact
rational partition of ``[0, ℓ]``. A 0-length section is a single edge.
Edges meeting a cell must agree with the cell's endpoint values
(``src(e_i) = ρ0(v_i)`` and ``tgt(e_i) = λ0(v_{i+1})``).

Sections compare by canonical form: the coarsest partition, obtained by
merging every pair of cells separated by an identity edge whose flows glue.
"""

from __future__ import annotations

import functools
import json
import math
from bisect import bisect_left
from dataclasses import dataclass, replace
from fractions import Fraction
from numbers import Real
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .graphs import GlueError
from .intervals import TranslationMap, duration, format_duration, sub_interval
from .linsys import LinearSystem

EPS_V = 1e-9

Point = tuple


class MalformedSection(ValueError):
    """Cells and edges do not line up."""


def _is_number(x) -> bool:
    return isinstance(x, Real) and not isinstance(x, bool)


def values_match(a, b, eps: float = EPS_V) -> bool:
    """Structural equality; floats compare within ``eps``, everything else exactly."""
    if isinstance(a, tuple) and isinstance(b, tuple):
        return len(a) == len(b) and all(values_match(x, y, eps) for x, y in zip(a, b))
    if _is_number(a) and _is_number(b):
        if isinstance(a, float) or isinstance(b, float):
            return abs(float(a) - float(b)) <= eps
        return a == b
    return type(a) is type(b) and a == b


def vec(values) -> tuple:
    return tuple(float(v) for v in np.asarray(values, dtype=float).ravel())


# -- flows -----------------------------------------------------------------


class Flow:
    """Behavior inside one cell, described independently of absolute time."""

    kind = "flow"

    def point(self, t: Fraction) -> Point:
        raise NotImplementedError

    def restrict(self, a: Fraction, b: Fraction) -> "Flow":
        raise NotImplementedError

    def merge(self, other: "Flow", length: Fraction) -> "Flow | None":
        return None

    def matches(self, other: "Flow", length: Fraction, eps: float = EPS_V) -> bool:
        raise NotImplementedError

    def validate(self, length: Fraction) -> None:
        pass

    def value(self, t: Fraction):
        """Numeric content at local time t (vector or label)."""
        return self.point(t)[0]

    def derivative(self, t: Fraction, length: Fraction, side: str | None = None) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class SymbolicConstant(Flow):
    """A constant label, optionally carrying a phase inside a period τ.

    With ``period`` set, the V(0)-values are ``(label, phase)`` as in
    ``Ω × Yon_τ``; without it they are just ``(label,)``.
    """

    label: Any
    phase: Fraction = Fraction(0)
    period: Fraction | None = None
    kind = "const"

    def __post_init__(self):
        object.__setattr__(self, "phase", duration(self.phase))
        if self.period is not None:
            object.__setattr__(self, "period", duration(self.period))

    def point(self, t):
        if self.period is None:
            return (self.label,)
        return (self.label, self.phase + t)

    def restrict(self, a, b):
        if self.period is None or a == 0:
            return self
        return replace(self, phase=self.phase + a)

    def validate(self, length):
        if self.period is not None and self.phase + length > self.period:
            raise MalformedSection(
                f"phase {format_duration(self.phase)} + {format_duration(length)} "
                f"overruns period {format_duration(self.period)}"
            )

    def merge(self, other, length):
        if not isinstance(other, SymbolicConstant) or other.period != self.period:
            return None
        if not values_match(self.label, other.label):
            return None
        if self.period is not None and other.phase != self.phase + length:
            return None
        return self

    def matches(self, other, length, eps=EPS_V):
        return (
            isinstance(other, SymbolicConstant)
            and other.period == self.period
            and other.phase == self.phase
            and values_match(self.label, other.label, eps)
        )

    def value(self, t):
        return self.label

    def derivative(self, t, length, side=None):
        return np.zeros(np.shape(np.asarray(self.label, dtype=float)))


@dataclass(frozen=True, eq=False)
class AffineODEFlow(Flow):
    """Solution of ``x' = Ax + B u(s)`` with ``x(0) = x0``, viewed from ``start``.

    ``u(s) = u + rate * s`` where ``rate`` is None for a held (constant) input.
    Points are ``(u(s), x(s))`` at ``s = start + t``.
    """

    system: LinearSystem
    x0: tuple
    u: tuple
    start: Fraction = Fraction(0)
    rate: tuple | None = None
    kind = "ode"

    def __post_init__(self):
        object.__setattr__(self, "x0", vec(self.x0))
        object.__setattr__(self, "u", vec(self.u))
        object.__setattr__(self, "start", duration(self.start))
        if self.rate is not None:
            object.__setattr__(self, "rate", vec(self.rate))
        if len(self.x0) != self.system.dim or len(self.u) != self.system.n_inputs:
            raise MalformedSection("state or input dimension does not fit the system")

    def input_at(self, t) -> tuple:
        if self.rate is None:
            return self.u
        s = float(self.start + t)
        return tuple(u + r * s for u, r in zip(self.u, self.rate))

    def state(self, t) -> np.ndarray:
        return self.system.propagate(self.x0, self.u, self.start + t, self.rate)

    def point(self, t):
        return (self.input_at(t), vec(self.state(t)))

    def value(self, t):
        return self.state(t)

    def restrict(self, a, b):
        if a == 0:
            return self
        return replace(self, start=self.start + a)

    def derivative(self, t, length, side=None):
        return self.system.derivative(self.state(t), self.input_at(t))

    def _same_origin(self, other):
        return (
            other.system == self.system
            and other.x0 == self.x0
            and other.u == self.u
            and other.rate == self.rate
        )

    def merge(self, other, length):
        if not isinstance(other, AffineODEFlow) or other.system != self.system:
            return None
        if self._same_origin(other) and other.start == self.start + length:
            return self
        if self.rate is None and other.rate is None and values_match(self.u, other.u):
            if values_match(vec(self.state(length)), vec(other.state(0))):
                return self
        return None

    def matches(self, other, length, eps=EPS_V):
        if not isinstance(other, AffineODEFlow) or other.system != self.system:
            return False
        if (self.rate is None) != (other.rate is None):
            return False
        if self.rate is not None and not values_match(self.rate, other.rate, eps):
            return False
        return values_match(self.input_at(0), other.input_at(0), eps) and values_match(
            vec(self.state(0)), vec(other.state(0)), eps
        )

    def __eq__(self, other):
        return isinstance(other, AffineODEFlow) and self._same_origin(other) and other.start == self.start

    def __hash__(self):
        return hash((self.x0, self.u, self.start, self.rate))


@dataclass(frozen=True, eq=False)
class DrivenODEFlow(Flow):
    """``x' = Ax + B u(s)`` with u a sampled input under first-order hold.

    ``inputs`` is given in the flow's own time (origin at ``s = 0`` where
    ``x = x0``); the state is propagated exactly knot by knot, with the
    input ramping linearly between samples.
    """

    system: LinearSystem
    x0: tuple
    inputs: "SampledTrajectory"
    start: Fraction = Fraction(0)
    kind = "driven"

    def __post_init__(self):
        object.__setattr__(self, "x0", vec(self.x0))
        object.__setattr__(self, "start", duration(self.start))
        if len(self.x0) != self.system.dim or len(self.inputs.values[0]) != self.system.n_inputs:
            raise MalformedSection("state or input dimension does not fit the system")

    @functools.cached_property
    def _knots(self) -> list:
        return [(Fraction(0), np.array(self.x0))]

    def _state_abs(self, s: Fraction) -> np.ndarray:
        inp = self.inputs
        knots = self._knots
        while knots[-1][0] < s:
            t0, x = knots[-1]
            k = inp._segment(t0)
            t1 = inp.offset + (k + 1) * inp.step
            if len(inp.values) < 2 or t1 <= t0:
                t1 = s  # past the last knot: continue the final ramp
            knots.append((t1, self.system.propagate(x, inp.value(t0), t1 - t0, inp.slope(t0))))
        i = bisect_left([k[0] for k in knots], s)
        if knots[i][0] == s:
            return knots[i][1]
        t0, x = knots[i - 1]
        return self.system.propagate(x, self.inputs.value(t0), s - t0, self.inputs.slope(t0))

    def input_at(self, t) -> tuple:
        return vec(self.inputs.value(self.start + t))

    def state(self, t) -> np.ndarray:
        return self._state_abs(self.start + Fraction(t))

    def point(self, t):
        return (self.input_at(t), vec(self.state(t)))

    def value(self, t):
        return self.state(t)

    def restrict(self, a, b):
        if a == 0:
            return self
        clone = replace(self, start=self.start + a)
        clone.__dict__["_knots"] = self._knots  # share the propagation cache
        return clone

    def input_flow(self, length) -> "SampledTrajectory":
        return self.inputs.restrict(self.start, self.start + length)

    def derivative(self, t, length, side=None):
        s = self.start + Fraction(t)
        u = self.inputs.value(s)
        return self.system.derivative(self.state(t), u)

    def _same_origin(self, other):
        return other.system == self.system and other.x0 == self.x0 and other.inputs == self.inputs

    def merge(self, other, length):
        if isinstance(other, DrivenODEFlow) and self._same_origin(other) and other.start == self.start + length:
            return self
        return None

    def matches(self, other, length, eps=EPS_V):
        return (
            isinstance(other, DrivenODEFlow)
            and other.system == self.system
            and self.input_flow(length).matches(other.input_flow(length), length, eps)
            and values_match(vec(self.state(0)), vec(other.state(0)), eps)
        )

    def __eq__(self, other):
        return isinstance(other, DrivenODEFlow) and self._same_origin(other) and other.start == self.start

    def __hash__(self):
        return hash((self.x0, self.inputs, self.start))


@dataclass(frozen=True)
class LinearReadout(Flow):
    """``y = C x`` along an ODE flow; points are ``(y,)``."""

    base: Flow
    kind = "readout"

    def point(self, t):
        return (vec(self.base.system.output(self.base.state(t))),)

    def value(self, t):
        return self.base.system.output(self.base.state(t))

    def restrict(self, a, b):
        return LinearReadout(self.base.restrict(a, b))

    def merge(self, other, length):
        if not isinstance(other, LinearReadout):
            return None
        merged = self.base.merge(other.base, length)
        return None if merged is None else LinearReadout(merged)

    def matches(self, other, length, eps=EPS_V):
        return isinstance(other, LinearReadout) and self.base.matches(other.base, length, eps)

    def derivative(self, t, length, side=None):
        return self.base.system.C @ self.base.derivative(t, length)


@dataclass(frozen=True)
class SampledTrajectory(Flow):
    """Samples on the uniform grid ``offset + k*step`` (local time), linearly interpolated.

    ``-step < offset <= 0`` and the samples cover the whole cell. Restriction
    keeps the original grid (no resampling), so restricted and glued pieces
    reproduce the same samples exactly.
    """

    values: tuple
    step: Fraction
    offset: Fraction = Fraction(0)
    kind = "sampled"

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(vec(v) for v in self.values))
        step = duration(self.step)
        if step == 0:
            raise MalformedSection("sample step must be positive")
        object.__setattr__(self, "step", step)
        offset = Fraction(self.offset)
        if not -step < offset <= 0:
            raise MalformedSection("grid offset must lie in (-step, 0]")
        object.__setattr__(self, "offset", offset)
        if len(self.values) < 1:
            raise MalformedSection("sampled flow needs samples")
        if len({len(v) for v in self.values}) != 1:
            raise MalformedSection("samples of unequal dimension")

    def _needed(self, length) -> int:
        return math.ceil((length - self.offset) / self.step) + 1

    def validate(self, length):
        if len(self.values) < self._needed(length):
            raise MalformedSection("samples do not cover the cell")

    def trimmed(self, length) -> "SampledTrajectory":
        n = self._needed(length)
        return self if len(self.values) == n else replace(self, values=self.values[:n])

    def _segment(self, t, side=None) -> int:
        x = (Fraction(t) - self.offset) / self.step
        k = math.floor(x)
        if side == "left" and x == k:
            k -= 1
        return max(0, min(k, len(self.values) - 2))

    def value(self, t):
        vals = self.values
        if len(vals) == 1:
            return np.array(vals[0])
        k = self._segment(t)
        w = float((Fraction(t) - self.offset) / self.step - k)
        a, b = np.array(vals[k]), np.array(vals[k + 1])
        return a + w * (b - a)

    def point(self, t):
        return (vec(self.value(t)),)

    def restrict(self, a, b):
        k0 = math.floor((a - self.offset) / self.step)
        new = replace(self, values=self.values[k0:], offset=self.offset + k0 * self.step - a)
        return new.trimmed(b - a)

    def slope(self, t, side=None) -> np.ndarray:
        if len(self.values) == 1:
            return np.zeros(len(self.values[0]))
        k = self._segment(t, side)
        return (np.array(self.values[k + 1]) - np.array(self.values[k])) / float(self.step)

    def derivative(self, t, length, side=None):
        t = Fraction(t)
        if side == "left" or side == "right":
            return self.slope(t, side)
        h = min(t, length - t, Fraction(1, 100000))
        if h <= 0:
            raise ValueError("central difference needs an interior point")
        return (self.value(t + h) - self.value(t - h)) / (2 * float(h))

    def merge(self, other, length):
        if not isinstance(other, SampledTrajectory) or other.step != self.step:
            return None
        shift = (length + other.offset - self.offset) / self.step
        if shift.denominator != 1:
            return None
        j = int(shift)
        if j > len(self.values):
            return None
        overlap = self.values[j:]
        if len(overlap) > len(other.values):
            return None
        if not all(values_match(a, b) for a, b in zip(overlap, other.values)):
            return None
        return replace(self, values=self.values[:j] + other.values)

    def matches(self, other, length, eps=EPS_V):
        return (
            isinstance(other, SampledTrajectory)
            and other.step == self.step
            and other.offset == self.offset
            and len(other.values) == len(self.values)
            and all(values_match(a, b, eps) for a, b in zip(self.values, other.values))
        )


@dataclass(frozen=True)
class FlowCell:
    length: Fraction
    flow: Flow

    def __post_init__(self):
        object.__setattr__(self, "length", duration(self.length))
        if isinstance(self.flow, SampledTrajectory):
            object.__setattr__(self, "flow", self.flow.trimmed(self.length))
        self.flow.validate(self.length)

    @property
    def left(self) -> Point:
        return self.flow.point(Fraction(0))

    @property
    def right(self) -> Point:
        return self.flow.point(self.length)

    def point(self, t) -> Point:
        return self.flow.point(Fraction(t))

    def restrict(self, a, b) -> "FlowCell":
        a, b = Fraction(a), Fraction(b)
        if not 0 <= a <= b <= self.length:
            raise ValueError(f"[{a}, {b}] is not inside a cell of length {self.length}")
        return FlowCell(b - a, self.flow.restrict(a, b))

    def merge(self, other: "FlowCell") -> "FlowCell | None":
        merged = self.flow.merge(other.flow, self.length)
        return None if merged is None else FlowCell(self.length + other.length, merged)

    def matches(self, other: "FlowCell", eps: float = EPS_V) -> bool:
        return self.length == other.length and self.flow.matches(other.flow, self.length, eps)


@dataclass(frozen=True)
class JumpEdge:
    """A jump at ``time``; ``label is None`` marks an identity edge (``src == tgt``)."""

    label: Any
    src: Point
    tgt: Point
    time: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "time", duration(self.time))
        if self.label is None and not values_match(self.src, self.tgt, 0.0):
            raise MalformedSection(f"identity edge with src {self.src!r} != tgt {self.tgt!r}")

    @property
    def is_identity(self) -> bool:
        return self.label is None

    def at(self, time) -> "JumpEdge":
        return self if self.time == time else replace(self, time=duration(time))

    def describe(self) -> str:
        kind = "id" if self.is_identity else repr(self.label)
        return f"{kind}@{format_duration(self.time)} {self.src!r}->{self.tgt!r}"


def identity_edge(point: Point, time=0) -> JumpEdge:
    return JumpEdge(None, point, point, duration(time))


def edges_match(e1: JumpEdge, e2: JumpEdge, eps: float = EPS_V) -> bool:
    if e1.is_identity != e2.is_identity:
        return False
    if not e1.is_identity and not values_match(e1.label, e2.label, eps):
        return False
    return values_match(e1.src, e2.src, eps) and values_match(e1.tgt, e2.tgt, eps)


# -- sections --------------------------------------------------------------


@dataclass(frozen=True)
class HybridSection:
    edges: tuple
    cells: tuple = ()

    def __post_init__(self):
        edges, cells = tuple(self.edges), tuple(self.cells)
        if len(edges) != len(cells) + 1:
            raise MalformedSection(f"{len(cells)} cells need {len(cells) + 1} edges, got {len(edges)}")
        t = Fraction(0)
        stamped = [edges[0].at(t)]
        for i, cell in enumerate(cells):
            if not values_match(edges[i].tgt, cell.left):
                raise MalformedSection(
                    f"edge at {format_duration(t)} lands on {edges[i].tgt!r} but the cell starts at {cell.left!r}"
                )
            t += cell.length
            if not values_match(cell.right, edges[i + 1].src):
                raise MalformedSection(
                    f"cell ending at {format_duration(t)} reaches {cell.right!r} but the edge leaves {edges[i + 1].src!r}"
                )
            stamped.append(edges[i + 1].at(t))
        object.__setattr__(self, "edges", tuple(stamped))
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "_times", tuple(e.time for e in stamped))

    @property
    def length(self) -> Fraction:
        return self.edges[-1].time

    @property
    def times(self) -> tuple:
        return self._times

    def is_canonical(self) -> bool:
        return canonicalize(self) == self

    def items(self) -> list:
        out = [self.edges[0]]
        for cell, edge in zip(self.cells, self.edges[1:]):
            out += [cell, edge]
        return out

    def jumps(self) -> list[JumpEdge]:
        return [e for e in self.edges if not e.is_identity]

    def locate(self, t) -> tuple[str, int]:
        """``("edge", i)`` if t is an edge time, else ``("cell", j)``."""
        t = Fraction(t)
        if not 0 <= t <= self.length:
            raise ValueError(f"time {t} outside [0, {self.length}]")
        times = self.times
        i = bisect_left(times, t)
        if i < len(times) and times[i] == t:
            return "edge", i
        return "cell", i - 1

    def point_at(self, t, side: str = "right") -> Point:
        """One-sided value: left limit (``src``) or right limit (``tgt``) at a jump."""
        where, i = self.locate(t)
        if where == "edge":
            return self.edges[i].src if side == "left" else self.edges[i].tgt
        return self.cells[i].point(Fraction(t) - self.edges[i].time)

    def equals(self, other: "HybridSection", eps: float = EPS_V) -> bool:
        return (
            len(self.cells) == len(other.cells)
            and all(edges_match(a, b, eps) and a.time == b.time for a, b in zip(self.edges, other.edges))
            and all(a.matches(b, eps) for a, b in zip(self.cells, other.cells))
        )

    def __repr__(self):
        parts = [self.edges[0].describe()]
        for cell, edge in zip(self.cells, self.edges[1:]):
            parts.append(f"<{cell.flow.kind} {format_duration(cell.length)}>")
            parts.append(edge.describe())
        return "HybridSection(" + ", ".join(parts) + ")"


def section(*items) -> HybridSection:
    """Build from an alternating ``e0, v1, e1, ...`` list; edge times are filled in."""
    if len(items) % 2 == 0:
        raise MalformedSection("alternating list must start and end with an edge")
    return HybridSection(tuple(items[0::2]), tuple(items[1::2]))


def constant_section(flow: Flow, length, left: JumpEdge | None = None, right: JumpEdge | None = None) -> HybridSection:
    """A one-cell section, with identity boundary edges unless given."""
    cell = FlowCell(length, flow)
    left = left or identity_edge(cell.left)
    right = right or identity_edge(cell.right)
    return HybridSection((left, right), (cell,))


def canonicalize(s: HybridSection) -> HybridSection:
    edges = [s.edges[0]]
    cells: list[FlowCell] = []
    for cell, nxt in zip(s.cells, s.edges[1:]):
        if cell.length == 0:
            prev = edges[-1]
            if prev.is_identity:
                edges[-1] = nxt
            elif nxt.is_identity:
                pass
            else:
                raise MalformedSection(
                    f"two jumps at one instant: {prev.describe()} and {nxt.describe()}"
                )
            continue
        if cells and edges[-1].is_identity:
            merged = cells[-1].merge(cell)
            if merged is not None:
                cells[-1] = merged
                edges[-1] = nxt
                continue
        cells.append(cell)
        edges.append(nxt)
    return HybridSection(tuple(edges), tuple(cells))


def _boundary_edge(s: HybridSection, x: Fraction) -> JumpEdge:
    where, i = s.locate(x)
    if where == "edge":
        return s.edges[i]
    return identity_edge(s.cells[i].point(x - s.edges[i].time))


def restrict(s: HybridSection, t: TranslationMap) -> HybridSection:
    """Restriction along ``Tr_p``; times in the result are relative to ``p``.

    A window end strictly inside a cell becomes that cell's identity edge; a
    window end on a jump keeps the jump (cell-locally that is the p = 0 or
    q = 0 case of the restriction table).
    """
    if t.target_len != s.length:
        raise ValueError(f"{t!r} does not apply to a section of length {format_duration(s.length)}")
    s = canonicalize(s)
    if t.is_identity():
        return s
    a, b = t.offset, t.end
    left = _boundary_edge(s, a)
    if a == b:
        return HybridSection((left.at(0),))
    edges, cells = [left], []
    for j, cell in enumerate(s.cells):
        lo, hi = s.edges[j].time, s.edges[j + 1].time
        lo_w, hi_w = max(a, lo), min(b, hi)
        if lo_w >= hi_w:
            continue
        cells.append(cell.restrict(lo_w - lo, hi_w - lo))
        edges.append(s.edges[j + 1] if hi_w == hi and hi < b else None)
    edges[-1] = _boundary_edge(s, b)
    return canonicalize(HybridSection(tuple(edges), tuple(cells)))


def restrict_to(s: HybridSection, start, stop) -> HybridSection:
    return restrict(s, sub_interval(start, stop, s.length))


def endpoint(s: HybridSection, side: str = "left") -> tuple[Point, JumpEdge]:
    """The boundary edge together with the flow's boundary value."""
    if side == "left":
        edge = s.edges[0]
        return edge.tgt, edge
    edge = s.edges[-1]
    return edge.src, edge


def glue(s1: HybridSection, s2: HybridSection, eps: float = EPS_V) -> HybridSection:
    e1, e2 = s1.edges[-1], s2.edges[0]
    if not edges_match(e1, e2, eps):
        raise GlueError(f"right end {e1.describe()} does not match left end {e2.describe()}")
    edges = s1.edges + tuple(s2.edges[1:])
    return canonicalize(HybridSection(edges, s1.cells + s2.cells))


def splice(s1: HybridSection, s2: HybridSection) -> HybridSection:
    """Continue ``s1`` by ``s2`` when s1 ends in an identity at the point s2 leaves from.

    This is how per-period segments are assembled: a segment is computed
    before the jump that opens the next one is known.
    """
    last, first = s1.edges[-1], s2.edges[0]
    if last.is_identity and not first.is_identity and values_match(last.src, first.src):
        return canonicalize(HybridSection(s1.edges[:-1] + s2.edges, s1.cells + s2.cells))
    return glue(s1, s2)


def open_right(s: HybridSection) -> HybridSection:
    """Replace a final jump by the identity at its source (for positive lengths)."""
    if not s.cells or s.edges[-1].is_identity:
        return s
    return HybridSection(s.edges[:-1] + (identity_edge(s.edges[-1].src),), s.cells)


def map_section(
    s: HybridSection,
    cell_fn: Callable[[FlowCell], FlowCell],
    edge_fn: Callable[[JumpEdge], JumpEdge],
) -> HybridSection:
    """Apply a cell-wise morphism (lengths and timestamps preserved)."""
    cells = tuple(cell_fn(c) for c in s.cells)
    edges = tuple(edge_fn(e) for e in s.edges)
    return canonicalize(HybridSection(edges, cells))


def breakpoints(s: HybridSection) -> list[Fraction]:
    return list(s.times)


# -- serialization -----------------------------------------------------------


def encode_value(v):
    if isinstance(v, bool) or v is None:
        return v
    if isinstance(v, Fraction):
        return {"q": format_duration(v)}
    if isinstance(v, float):
        return {"f": format(v, ".17g")}
    if isinstance(v, int):
        return v
    if isinstance(v, str):
        return v
    if isinstance(v, tuple):
        return {"t": [encode_value(x) for x in v]}
    raise TypeError(f"cannot serialize {v!r}")


def decode_value(v):
    if isinstance(v, dict):
        if "q" in v:
            return Fraction(v["q"])
        if "f" in v:
            return float(v["f"])
        if "t" in v:
            return tuple(decode_value(x) for x in v["t"])
        raise ValueError(f"unknown tagged value {v!r}")
    if isinstance(v, list):
        return tuple(decode_value(x) for x in v)
    return v


def encode_flow(flow: Flow) -> dict:
    if isinstance(flow, SymbolicConstant):
        return {
            "type": "const",
            "label": encode_value(flow.label),
            "phase": encode_value(flow.phase),
            "period": None if flow.period is None else encode_value(flow.period),
        }
    if isinstance(flow, AffineODEFlow):
        return {
            "type": "ode",
            "system": flow.system.name,
            "x0": encode_value(flow.x0),
            "u": encode_value(flow.u),
            "start": encode_value(flow.start),
            "rate": None if flow.rate is None else encode_value(flow.rate),
        }
    if isinstance(flow, DrivenODEFlow):
        return {
            "type": "driven",
            "system": flow.system.name,
            "x0": encode_value(flow.x0),
            "start": encode_value(flow.start),
            "inputs": encode_flow(flow.inputs),
        }
    if isinstance(flow, LinearReadout):
        return {"type": "readout", "base": encode_flow(flow.base)}
    if isinstance(flow, SampledTrajectory):
        return {
            "type": "sampled",
            "step": encode_value(flow.step),
            "offset": encode_value(flow.offset),
            "values": encode_value(flow.values),
        }
    raise TypeError(f"cannot serialize flow {flow!r}")


def decode_flow(d: Mapping, systems: Mapping[str, LinearSystem]) -> Flow:
    kind = d["type"]
    if kind == "const":
        period = d.get("period")
        return SymbolicConstant(
            decode_value(d["label"]), decode_value(d["phase"]), None if period is None else decode_value(period)
        )
    if kind == "ode":
        try:
            system = systems[d["system"]]
        except KeyError:
            raise ValueError(f"unknown system {d['system']!r}") from None
        rate = d.get("rate")
        return AffineODEFlow(
            system, decode_value(d["x0"]), decode_value(d["u"]), decode_value(d["start"]),
            None if rate is None else decode_value(rate),
        )
    if kind == "driven":
        try:
            system = systems[d["system"]]
        except KeyError:
            raise ValueError(f"unknown system {d['system']!r}") from None
        return DrivenODEFlow(system, decode_value(d["x0"]), decode_flow(d["inputs"], systems), decode_value(d["start"]))
    if kind == "readout":
        return LinearReadout(decode_flow(d["base"], systems))
    if kind == "sampled":
        return SampledTrajectory(decode_value(d["values"]), decode_value(d["step"]), decode_value(d["offset"]))
    raise ValueError(f"unknown flow type {kind!r}")


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def section_rows(s: HybridSection) -> list[tuple[str, str, str, str]]:
    """One row per cell: ``(t_start, t_end, kind, payload)`` with exact rational times."""
    rows = []
    for i, edge in enumerate(s.edges):
        t = format_duration(edge.time)
        if edge.is_identity:
            payload = {"identity": True, "point": encode_value(edge.src)}
        else:
            payload = {"label": encode_value(edge.label), "src": encode_value(edge.src), "tgt": encode_value(edge.tgt)}
        rows.append((t, t, "jump", _dumps(payload)))
        if i < len(s.cells):
            cell = s.cells[i]
            rows.append((t, format_duration(edge.time + cell.length), "flow", _dumps(encode_flow(cell.flow))))
    return rows


def section_from_rows(rows: Iterable[Sequence[str]], systems: Mapping[str, LinearSystem] | None = None) -> HybridSection:
    systems = systems or {}
    edges, cells = [], []
    for t_start, t_end, kind, payload in rows:
        data = json.loads(payload)
        start, end = Fraction(t_start), Fraction(t_end)
        if kind == "jump":
            if data.get("identity"):
                edges.append(identity_edge(decode_value(data["point"]), start))
            else:
                edges.append(
                    JumpEdge(decode_value(data["label"]), decode_value(data["src"]), decode_value(data["tgt"]), start)
                )
        elif kind == "flow":
            cells.append(FlowCell(end - start, decode_flow(data, systems)))
        else:
            raise ValueError(f"unknown row kind {kind!r}")
    result = HybridSection(tuple(edges), tuple(cells))
    for edge, stored in zip(result.edges, edges):
        if edge.time != stored.time:
            raise MalformedSection(f"jump stamped {stored.time} sits at {edge.time}")
    return result
