"""Abstract machines: spans ``I <- S -> O`` of interval sheaves.

A machine exposes its legs ``p_i`` and ``p_o`` as cell-wise maps from state
sections to input/output sections, and an executor that turns input
sections into the (unique) state section over them. Execution goes through a
:class:`Stepper`, which advances one segment at a time so that composites can
interleave machines and sample feedback at period boundaries.

Constructors: :class:`LTSMachine` (labeled transition systems),
:class:`CDSMachine` (linear ODEs with held or first-order-hold inputs),
:class:`MapMachine` (a sheaf morphism as a memoryless machine) and
:class:`SamplerMachine` (guards sampled at period boundaries).
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Hashable, Mapping, Sequence

import numpy as np

from .graphs import STAR, complete_graph, loop_graph, transition_graph
from .hybrid import HybridSheafDatum, gamma, realize
from .intervals import TranslationMap, duration, format_duration, sub_interval
from .linsys import LinearSystem
from .sections import (
    AffineODEFlow,
    DrivenODEFlow,
    FlowCell,
    HybridSection,
    JumpEdge,
    LinearReadout,
    MalformedSection,
    SampledTrajectory,
    SymbolicConstant,
    canonicalize,
    glue,
    identity_edge,
    map_section,
    open_right,
    restrict,
    splice,
    vec,
)


class MappingError(ValueError):
    """A morphism met a cell it is not defined on."""


class SpecError(ValueError):
    """A machine specification is inconsistent or does not parse."""


# -- sheaf types and morphisms -----------------------------------------------


@dataclass(frozen=True)
class SheafMorphism:
    """A cell-wise map between section types.

    ``cell_fn`` and ``edge_fn`` act on cells and edges; ``point_fn`` acts on
    V(0)-values and is what samplers use to read a wire at an instant.
    """

    name: str
    source: str
    target: str
    cell_fn: Callable[[FlowCell], FlowCell]
    edge_fn: Callable[[JumpEdge], JumpEdge]
    point_fn: Callable[[tuple], tuple]

    def __call__(self, s: HybridSection) -> HybridSection:
        return map_section(s, self.cell_fn, self.edge_fn)

    def point(self, p: tuple) -> tuple:
        return self.point_fn(p)


def identity_morphism(type_name: str) -> SheafMorphism:
    return SheafMorphism("id", type_name, type_name, lambda c: c, lambda e: e, lambda p: p)


def relabel_morphism(name: str, mapping: Mapping, source: str, target: str) -> SheafMorphism:
    """Map labels of phase-carrying data (``K(Ω)``-style sections) pointwise.

    Vertex cells ``(ω, r)`` go to ``(f(ω), r)`` and transition edges
    ``(ω_a, ω_b)`` to ``(f(ω_a), f(ω_b))``.
    """

    def f(label):
        try:
            return mapping[label]
        except (KeyError, TypeError):
            raise MappingError(f"{name}: no image for label {label!r}") from None

    def cell_fn(cell):
        flow = cell.flow
        if not isinstance(flow, SymbolicConstant):
            raise MappingError(f"{name}: cannot map a {flow.kind} cell of length {cell.length}")
        return FlowCell(cell.length, SymbolicConstant(f(flow.label), flow.phase, flow.period))

    def point_fn(p):
        return (f(p[0]),) + tuple(p[1:])

    def edge_fn(e):
        if e.is_identity:
            return identity_edge(point_fn(e.src), e.time)
        if not (isinstance(e.label, tuple) and len(e.label) == 2):
            raise MappingError(f"{name}: edge {e.describe()} is not a label pair")
        a, b = e.label
        return JumpEdge((f(a), f(b)), point_fn(e.src), point_fn(e.tgt), e.time)

    return SheafMorphism(name, source, target, cell_fn, edge_fn, point_fn)


def hold_morphism(name: str = "g", source: str = "Delta", target: str = "PC") -> SheafMorphism:
    """Phase-carrying numeric labels to held (piecewise-constant) input vectors.

    Cells ``(d, r)`` become constant inputs ``(d,)``; a transition ``(d_a, d_b)``
    becomes a switch, or an identity edge when the value does not change.
    """

    def as_input(label):
        if isinstance(label, tuple):
            return tuple(float(v) for v in label)
        if isinstance(label, (int, float)) and not isinstance(label, bool):
            return (float(label),)
        raise MappingError(f"{name}: label {label!r} is not numeric")

    def point_fn(p):
        return (as_input(p[0]),)

    def cell_fn(cell):
        flow = cell.flow
        if not isinstance(flow, SymbolicConstant):
            raise MappingError(f"{name}: cannot hold a {flow.kind} cell of length {cell.length}")
        return FlowCell(cell.length, SymbolicConstant(as_input(flow.label)))

    def edge_fn(e):
        src, tgt = point_fn(e.src), point_fn(e.tgt)
        if e.is_identity or src == tgt:
            return identity_edge(src, e.time)
        return JumpEdge("switch", src, tgt, e.time)

    return SheafMorphism(name, source, target, cell_fn, edge_fn, point_fn)


# -- machines ----------------------------------------------------------------


class Stepper:
    """Advances a machine one segment at a time.

    ``output_point`` is the left limit of an output at the current instant,
    i.e. before the next segment's opening jump; ``upstream`` resolves the
    left limits of this machine's inputs for memoryless machines.
    """

    def output_point(self, port: str, upstream: Callable[[str], tuple]) -> tuple:
        raise NotImplementedError

    def prepare(self, upstream: Callable[[str], tuple], length: Fraction) -> None:
        """Sampling phase, run before any machine advances over the segment."""

    def early_output(self, port: str) -> HybridSection | None:
        """An output segment already fixed by :meth:`prepare`, if any."""
        return None

    def advance(self, inputs: Mapping[str, HybridSection], length: Fraction):
        raise NotImplementedError


class Machine:
    name: str = "machine"
    inputs: Mapping[str, str] = {}
    outputs: Mapping[str, str] = {}
    period: Fraction | None = None
    samples: bool = False  # outputs only change at sampling instants

    def _port(self, ports: Mapping, port):
        if port is None:
            if len(ports) != 1:
                raise ValueError(f"{self.name}: port must be named, have {sorted(ports)}")
            return next(iter(ports))
        if port not in ports:
            raise KeyError(f"{self.name} has no port {port!r}")
        return port

    def p_i(self, state, port: str | None = None) -> HybridSection:
        raise NotImplementedError

    def p_o(self, state, port: str | None = None) -> HybridSection:
        raise NotImplementedError

    def is_state(self, state) -> bool:
        raise NotImplementedError

    def stepper(self) -> Stepper:
        raise NotImplementedError

    def state_length(self, state) -> Fraction:
        return state_length(state)

    def execute(self, inputs=None, horizon=None):
        """Run open loop: the unique state section over the given inputs."""
        if isinstance(inputs, HybridSection):
            inputs = {self._port(self.inputs, None): inputs}
        return run(self, dict(inputs or {}), horizon)


def state_length(state) -> Fraction:
    if isinstance(state, HybridSection):
        return state.length
    lengths = {state_length(v) for v in _leaves(state)}
    if len(lengths) != 1:
        raise ValueError(f"state components disagree on length: {sorted(lengths)}")
    return lengths.pop()


def _leaves(state):
    if isinstance(state, HybridSection):
        yield state
    else:
        for v in state.values():
            yield from _leaves(v)


def map_state(fn: Callable[[HybridSection], HybridSection], state):
    if isinstance(state, HybridSection):
        return fn(state)
    return {k: map_state(fn, v) for k, v in state.items()}


def restrict_state(state, t: TranslationMap):
    return map_state(lambda s: restrict(s, t), state)


def splice_state(a, b):
    if isinstance(a, HybridSection):
        return splice(a, b)
    return {k: splice_state(a[k], b[k]) for k in a}


def glue_state(a, b):
    if isinstance(a, HybridSection):
        return glue(a, b)
    return {k: glue_state(a[k], b[k]) for k in a}


def flatten_state(state, prefix: str = "") -> dict[str, HybridSection]:
    if isinstance(state, HybridSection):
        return {prefix or "state": state}
    out = {}
    for k, v in state.items():
        out.update(flatten_state(v, f"{prefix}.{k}" if prefix else str(k)))
    return out


def segment_bounds(horizon: Fraction, period: Fraction | None) -> list[tuple[Fraction, Fraction]]:
    """Consecutive ``[a, b]`` windows covering ``[0, horizon]``, then the closing instant."""
    if period is None or horizon == 0:
        bounds = [(Fraction(0), horizon)] if horizon else []
    else:
        n = horizon / period
        if n.denominator != 1:
            raise ValueError(f"horizon {horizon} is not a multiple of the period {period}")
        bounds = [(k * period, (k + 1) * period) for k in range(int(n))]
    return bounds + [(horizon, horizon)]


def input_segment(s: HybridSection, a: Fraction, b: Fraction) -> HybridSection:
    return open_right(restrict(s, sub_interval(a, b, s.length)))


def run(machine: Machine, inputs: Mapping[str, HybridSection], horizon=None):
    """Execute segment by segment and assemble the state section."""
    missing = set(machine.inputs) - set(inputs)
    if missing:
        raise ValueError(f"{machine.name}: no section for inputs {sorted(missing)}")
    lengths = {s.length for s in inputs.values()}
    if horizon is None:
        if len(lengths) != 1:
            raise ValueError("horizon needed: inputs disagree on length or there are none")
        horizon = lengths.pop()
    horizon = duration(horizon)
    if any(L < horizon for L in lengths):
        raise ValueError(f"inputs do not cover the horizon {format_duration(horizon)}")
    tau = machine.period
    if tau is not None and (horizon / tau).denominator != 1:
        trimmed = (horizon // tau) * tau
        warnings.warn(
            f"{machine.name}: horizon {format_duration(horizon)} truncated to {format_duration(trimmed)}",
            stacklevel=2,
        )
        horizon = trimmed
    inputs = {
        k: s if s.length == horizon else restrict(s, sub_interval(0, horizon, s.length))
        for k, s in inputs.items()
    }
    stepper = machine.stepper()
    state = None
    for a, b in segment_bounds(horizon, tau):
        stepper.prepare(lambda port: inputs[port].point_at(a, "left"), b - a)
        seg = stepper.advance({k: input_segment(s, a, b) for k, s in inputs.items()}, b - a)
        state = seg if state is None else splice_state(state, seg)
    return state


# -- labeled transition systems ----------------------------------------------


@dataclass(frozen=True)
class LTSSpec:
    """``(S, Λ, Ω, T, O, s0)`` with a partial transition map and period τ."""

    states: tuple
    initial: Hashable
    inputs: tuple
    outputs: tuple
    transitions: Mapping  # (label, state) -> state
    output: Mapping  # state -> output label
    period: Fraction

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        object.__setattr__(self, "transitions", dict(self.transitions))
        object.__setattr__(self, "output", dict(self.output))
        object.__setattr__(self, "period", duration(self.period))
        if self.period == 0:
            raise SpecError("period must be positive")
        if not self.states or self.initial not in self.states:
            raise SpecError(f"initial state {self.initial!r} is not a state")
        if not self.inputs:
            raise SpecError("no input labels")
        for (lam, s), s2 in self.transitions.items():
            if lam not in self.inputs or s not in self.states or s2 not in self.states:
                raise SpecError(f"transition ({lam!r}, {s!r}) -> {s2!r} leaves the declared sets")
        for s in self.states:
            if s not in self.output:
                raise SpecError(f"output map undefined on {s!r}")
            if self.output[s] not in self.outputs:
                raise SpecError(f"O({s!r}) = {self.output[s]!r} is not an output label")

    def step(self, label, state):
        """T, totalized: labels outside the domain leave the state unchanged."""
        if label not in self.inputs:
            raise SpecError(f"unknown input label {label!r}")
        return self.transitions.get((label, state), state)

    def total(self) -> "LTSSpec":
        full = {(lam, s): self.step(lam, s) for lam in self.inputs for s in self.states}
        return LTSSpec(self.states, self.initial, self.inputs, self.outputs, full, self.output, self.period)

    def run(self, labels: Sequence, state=None) -> list:
        """The states visited by folding T over a label sequence."""
        state = self.initial if state is None else state
        path = [state]
        for lam in labels:
            state = self.step(lam, state)
            path.append(state)
        return path


_LTS_LINE = re.compile(r"^(\w+)\s*:\s*(.*)$")


def parse_lts(text: str) -> LTSSpec:
    """Read the line-oriented LTS format (see :func:`dump_lts`)."""
    fields: dict[str, str] = {}
    transitions, output = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        if words[0] == "transition":
            if len(words) != 4:
                raise SpecError(f"line {lineno}: expected 'transition <label> <state> <state>'")
            key = (words[1], words[2])
            if key in transitions:
                raise SpecError(f"line {lineno}: transition {key} given twice")
            transitions[key] = words[3]
        elif words[0] == "output":
            if len(words) != 3:
                raise SpecError(f"line {lineno}: expected 'output <state> <label>'")
            output[words[1]] = words[2]
        else:
            m = _LTS_LINE.match(line)
            if not m or m.group(1) not in ("states", "initial", "inputs", "outputs", "period"):
                raise SpecError(f"line {lineno}: cannot parse {raw.strip()!r}")
            fields[m.group(1)] = m.group(2).strip()
    for key in ("states", "initial", "inputs", "outputs", "period"):
        if key not in fields:
            raise SpecError(f"missing '{key}:' line")
    try:
        period = duration(fields["period"])
    except (TypeError, ValueError) as exc:
        raise SpecError(f"bad period: {exc}") from None
    return LTSSpec(
        tuple(fields["states"].split()),
        fields["initial"],
        tuple(fields["inputs"].split()),
        tuple(fields["outputs"].split()),
        transitions,
        output,
        period,
    )


def dump_lts(spec: LTSSpec) -> str:
    lines = [
        f"states: {' '.join(map(str, spec.states))}",
        f"initial: {spec.initial}",
        f"inputs: {' '.join(map(str, spec.inputs))}",
        f"outputs: {' '.join(map(str, spec.outputs))}",
        f"period: {format_duration(spec.period)}",
    ]
    order = {lam: i for i, lam in enumerate(spec.inputs)}
    sorder = {s: i for i, s in enumerate(spec.states)}
    for (lam, s), s2 in sorted(spec.transitions.items(), key=lambda kv: (order[kv[0][0]], sorder[kv[0][1]])):
        lines.append(f"transition {lam} {s} {s2}")
    for s in spec.states:
        lines.append(f"output {s} {spec.output[s]}")
    return "\n".join(lines) + "\n"


class _LTSStepper(Stepper):
    def __init__(self, m: "LTSMachine"):
        self.m = m
        self.state = m.spec.initial
        self.phase = m.spec.period

    def output_point(self, port, upstream):
        return (self.m.spec.output[self.state], self.phase)

    def advance(self, inputs, length):
        m, tau = self.m, self.m.spec.period
        seg = inputs[m.in_port]
        edges, cells = [], []
        for i, e in enumerate(seg.edges):
            if e.is_identity:
                self.phase = e.src[1]
                edges.append(identity_edge((self.state, self.phase)))
            else:
                if e.src[1] != tau:
                    raise MalformedSection(f"{m.name}: jump {e.label!r} arrives at phase {e.src[1]}, not τ")
                nxt = m.spec.step(e.label, self.state)
                edges.append(m.state_datum.jump((e.label, self.state)))
                self.state, self.phase = nxt, m.state_datum.target_phase
            if i < len(seg.cells):
                cell = seg.cells[i]
                cells.append(FlowCell(cell.length, SymbolicConstant(self.state, cell.flow.phase, tau)))
                self.phase = cell.flow.phase + cell.length
        return HybridSection(tuple(edges), tuple(cells))


class LTSMachine(Machine):
    """The span ``Loop(Λ) <- G(Λ, S) -> K(Ω)`` of realized τ-periodic data.

    The state datum is built from the totalized transition map so that a
    label outside T's domain still crosses the phase reset (as a stay edge
    ``(λ, s): s -> s``); :attr:`transition_graph` keeps the partial T.
    """

    def __init__(self, spec: LTSSpec, name: str = "lts", in_port: str = "in", out_port: str = "out",
                 input_type: str = "Loop", output_type: str = "K"):
        self.spec = spec
        self.name = name
        self.in_port, self.out_port = in_port, out_port
        self.inputs = {in_port: input_type}
        self.outputs = {out_port: output_type}
        self.period = spec.period
        self.transition_graph = transition_graph(spec)
        self.input_datum = gamma(loop_graph(spec.inputs), spec.period)
        self.output_datum = gamma(complete_graph(spec.outputs), spec.period)
        self.state_datum = gamma(transition_graph(spec.total()), spec.period)
        self.input_sheaf = realize(self.input_datum)
        self.output_sheaf = realize(self.output_datum)
        self.state_sheaf = realize(self.state_datum)

    def h(self, label, state) -> tuple:
        """Output pair of a transition: ``(O(s), O(T(λ, s)))``."""
        return (self.spec.output[state], self.spec.output[self.spec.step(label, state)])

    def _pi_cell(self, cell):
        f = cell.flow
        return FlowCell(cell.length, SymbolicConstant(STAR, f.phase, f.period))

    def _pi_edge(self, e):
        if e.is_identity:
            return identity_edge((STAR, e.src[1]), e.time)
        lam, _ = e.label
        return self.input_datum.jump(lam, e.time)

    def _po_cell(self, cell):
        f = cell.flow
        return FlowCell(cell.length, SymbolicConstant(self.spec.output[f.label], f.phase, f.period))

    def _po_edge(self, e):
        if e.is_identity:
            return identity_edge((self.spec.output[e.src[0]], e.src[1]), e.time)
        lam, s = e.label
        return self.output_datum.jump(self.h(lam, s), e.time)

    def p_i(self, state, port=None):
        self._port(self.inputs, port)
        return map_section(state, self._pi_cell, self._pi_edge)

    def p_o(self, state, port=None):
        self._port(self.outputs, port)
        return map_section(state, self._po_cell, self._po_edge)

    def is_state(self, state) -> bool:
        return isinstance(state, HybridSection) and self.state_sheaf.member(state)

    def stepper(self):
        return _LTSStepper(self)

    def input_section(self, labels: Sequence, tail=None) -> HybridSection:
        """Input with ``labels[k]`` firing at ``kτ`` (a convenience for tests and demos)."""
        return self.input_sheaf.periodic(list(labels), tail=tail)


# -- continuous linear systems -------------------------------------------------


@dataclass(frozen=True, eq=False)
class LinearCDS:
    """``x' = Ax + Bu``, ``y = Cx``, ``x(0) = x0``."""

    system: LinearSystem
    x0: tuple
    input_mode: str = "piecewise-constant"

    def __post_init__(self):
        object.__setattr__(self, "x0", vec(self.x0))
        if len(self.x0) != self.system.dim:
            raise SpecError(f"x0 has {len(self.x0)} entries, expected {self.system.dim}")
        if not np.all(np.isfinite(self.x0)):
            raise SpecError("x0 must be finite")
        if self.input_mode not in ("piecewise-constant", "smooth"):
            raise SpecError(f"unknown input mode {self.input_mode!r}")

    @classmethod
    def from_matrices(cls, A, B, C=None, x0=None, name="cds", state_names=None, input_mode="piecewise-constant"):
        system = LinearSystem(A, B, C, name=name, state_names=state_names)
        return cls(system, np.zeros(system.dim) if x0 is None else x0, input_mode)

    def with_x0(self, x0) -> "LinearCDS":
        return LinearCDS(self.system, x0, self.input_mode)


def _numbers(text: str, count: int, what: str, lineno: int) -> list[float]:
    try:
        values = [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise SpecError(f"line {lineno}: {what} must be decimal numbers") from None
    if len(values) != count:
        raise SpecError(f"line {lineno}: {what} needs {count} numbers, got {len(values)}")
    return values


def parse_cds(text: str) -> LinearCDS:
    """Read matrices as row-major decimal arrays after a ``dims: d m k`` line."""
    fields, where = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _LTS_LINE.match(line)
        if not m:
            raise SpecError(f"line {lineno}: expected 'key: value'")
        key = m.group(1)
        if key not in ("name", "dims", "states", "A", "B", "C", "x0", "mode"):
            raise SpecError(f"line {lineno}: unknown key {key!r}")
        fields[key], where[key] = m.group(2).strip(), lineno
    if "dims" not in fields:
        raise SpecError("missing 'dims: d m k' line")
    try:
        d, m_, k = (int(v) for v in fields["dims"].split())
    except ValueError:
        raise SpecError(f"line {where['dims']}: dims must be three integers") from None
    if min(d, m_, k) <= 0:
        raise SpecError(f"line {where['dims']}: dimensions must be positive")
    for key in ("A", "B", "C"):
        if key not in fields:
            raise SpecError(f"missing '{key}:' line")
    A = np.array(_numbers(fields["A"], d * d, "A", where["A"])).reshape(d, d)
    B = np.array(_numbers(fields["B"], d * m_, "B", where["B"])).reshape(d, m_)
    C = np.array(_numbers(fields["C"], k * d, "C", where["C"])).reshape(k, d)
    x0 = _numbers(fields["x0"], d, "x0", where["x0"]) if "x0" in fields else [0.0] * d
    names = fields["states"].split() if "states" in fields else None
    if names is not None and len(names) != d:
        raise SpecError(f"line {where['states']}: need {d} state names")
    system = LinearSystem(A, B, C, name=fields.get("name", "cds"), state_names=names)
    return LinearCDS(system, x0, fields.get("mode", "piecewise-constant"))


def _row(values) -> str:
    return " ".join(format(float(v), ".17g") for v in np.asarray(values).ravel())


def dump_cds(cds: LinearCDS) -> str:
    s = cds.system
    return "\n".join(
        [
            f"name: {s.name}",
            f"dims: {s.dim} {s.n_inputs} {s.n_outputs}",
            f"states: {' '.join(s.state_names)}",
            f"A: {_row(s.A)}",
            f"B: {_row(s.B)}",
            f"C: {_row(s.C)}",
            f"x0: {_row(cds.x0)}",
            f"mode: {cds.input_mode}",
        ]
    ) + "\n"


class _CDSStepper(Stepper):
    def __init__(self, m: "CDSMachine"):
        self.m = m
        self.x = np.array(m.cds.x0, dtype=float)

    def output_point(self, port, upstream):
        return (vec(self.m.system.output(self.x)),)

    def advance(self, inputs, length):
        m = self.m
        seg = inputs[m.in_port]
        edges, cells = [], []
        for i, e in enumerate(seg.edges):
            xs = vec(self.x)
            if e.is_identity:
                edges.append(identity_edge((tuple(e.src[0]), xs)))
            else:
                edges.append(JumpEdge("switch", (tuple(e.src[0]), xs), (tuple(e.tgt[0]), xs)))
            if i < len(seg.cells):
                cell = seg.cells[i]
                flow = m.state_flow(cell, self.x)
                cells.append(FlowCell(cell.length, flow))
                self.x = flow.state(cell.length)
        return HybridSection(tuple(edges), tuple(cells))


class CDSMachine(Machine):
    """The span ``I <- S -> O`` of a linear system: ``p_i = π1``, ``p_o = C π2``.

    State points are ``(u, x)``; input points ``(u,)``; output points ``(y,)``.
    ``step`` is the sampling grid used when a trajectory is tabulated.
    """

    def __init__(self, cds: LinearCDS, step=Fraction(1, 10), name: str | None = None,
                 in_port: str = "u", out_port: str = "y", input_type: str | None = None, output_type: str = "C"):
        step = duration(step)
        if step == 0:
            raise SpecError("sampling step must be positive")
        self.cds = cds
        self.system = cds.system
        self.step = step
        self.name = name or cds.system.name
        self.in_port, self.out_port = in_port, out_port
        default_in = "PC" if cds.input_mode == "piecewise-constant" else "PL"
        self.inputs = {in_port: input_type or default_in}
        self.outputs = {out_port: output_type}

    def state_flow(self, input_cell: FlowCell, x) -> AffineODEFlow | DrivenODEFlow:
        f = input_cell.flow
        if isinstance(f, SymbolicConstant) and f.period is None:
            return AffineODEFlow(self.system, x, f.label)
        if isinstance(f, SampledTrajectory) and self.cds.input_mode == "smooth":
            return DrivenODEFlow(self.system, x, f)
        raise MappingError(
            f"{self.name}: input cell {f.kind} of length {input_cell.length} does not fit mode {self.cds.input_mode}"
        )

    def _pi_cell(self, cell):
        f = cell.flow
        if isinstance(f, AffineODEFlow) and f.rate is None:
            return FlowCell(cell.length, SymbolicConstant(f.u))
        if isinstance(f, DrivenODEFlow):
            return FlowCell(cell.length, f.input_flow(cell.length))
        raise MappingError(f"{self.name}: not a state cell: {f.kind}")

    @staticmethod
    def _pi_point(p):
        return (tuple(p[0]),)

    def _pi_edge(self, e):
        if e.is_identity:
            return identity_edge(self._pi_point(e.src), e.time)
        return JumpEdge("switch", self._pi_point(e.src), self._pi_point(e.tgt), e.time)

    def _po_edge(self, e):
        return identity_edge((vec(self.system.output(e.src[1])),), e.time)

    def p_i(self, state, port=None):
        self._port(self.inputs, port)
        return map_section(state, self._pi_cell, self._pi_edge)

    def p_o(self, state, port=None):
        self._port(self.outputs, port)
        return map_section(state, lambda c: FlowCell(c.length, LinearReadout(c.flow)), self._po_edge)

    def is_state(self, state) -> bool:
        if not isinstance(state, HybridSection):
            return False
        for cell in state.cells:
            if not isinstance(cell.flow, (AffineODEFlow, DrivenODEFlow)) or cell.flow.system != self.system:
                return False
        for e in state.edges:
            if not e.is_identity and (e.label != "switch" or not np.allclose(e.src[1], e.tgt[1], atol=0, rtol=0)):
                return False
        return True

    def stepper(self):
        return _CDSStepper(self)

    def tabulate(self, state: HybridSection, step=None) -> list[tuple[Fraction, tuple]]:
        """``(t, x(t))`` on the sampling grid (right limits at jumps)."""
        step = duration(step) if step is not None else self.step
        out, t = [], Fraction(0)
        while t <= state.length:
            out.append((t, state.point_at(t, "right")[1]))
            t += step
        return out


def held_input(values: Sequence, durations: Sequence, start=None) -> HybridSection:
    """A piecewise-constant input section: ``values[i]`` held for ``durations[i]``.

    ``start`` is the value held before time 0 (defaults to ``values[0]``); a
    change at a cell boundary is a switch edge, no change an identity.
    """
    vals = [tuple(float(x) for x in np.atleast_1d(v)) for v in values]
    if len(vals) != len(durations) or not vals:
        raise ValueError("one duration per value")
    prev = vals[0] if start is None else tuple(float(x) for x in np.atleast_1d(start))
    edges, cells = [], []
    for v, d in zip(vals, durations):
        edges.append(identity_edge((v,)) if v == prev else JumpEdge("switch", (prev,), (v,)))
        cells.append(FlowCell(duration(d), SymbolicConstant(v)))
        prev = v
    edges.append(identity_edge((prev,)))
    return canonicalize(HybridSection(tuple(edges), tuple(cells)))


# -- memoryless machines -----------------------------------------------------------


class _MapStepper(Stepper):
    def __init__(self, m: "MapMachine"):
        self.m = m

    def output_point(self, port, upstream):
        return self.m.morphism.point(upstream(self.m.in_port))

    def advance(self, inputs, length):
        return inputs[self.m.in_port]


class MapMachine(Machine):
    """``I <-(=)- I -(f)-> O``: the state is the input and the output is f of it."""

    def __init__(self, morphism: SheafMorphism, name: str | None = None, in_port: str = "in", out_port: str = "out"):
        self.morphism = morphism
        self.name = name or morphism.name
        self.in_port, self.out_port = in_port, out_port
        self.inputs = {in_port: morphism.source}
        self.outputs = {out_port: morphism.target}

    def p_i(self, state, port=None):
        self._port(self.inputs, port)
        return state

    def p_o(self, state, port=None):
        self._port(self.outputs, port)
        return self.morphism(state)

    def is_state(self, state) -> bool:
        if not isinstance(state, HybridSection):
            return False
        try:
            self.morphism(state)
        except (MappingError, MalformedSection):
            return False
        return True

    def stepper(self):
        return _MapStepper(self)


def identity_machine(type_name: str, name: str = "id", in_port: str = "in", out_port: str = "out") -> MapMachine:
    return MapMachine(identity_morphism(type_name), name, in_port, out_port)


# -- samplers -----------------------------------------------------------------------


class _SamplerStepper(Stepper):
    def __init__(self, m: "SamplerMachine"):
        self.m = m
        self.pending: dict[str, HybridSection] | None = None
        self.last_labels: dict[str, Hashable] = {}

    def output_point(self, port, upstream):
        return (STAR, self.m.period)

    def prepare(self, upstream, length):
        labels = self.m.fire({p: upstream(p) for p in self.m.inputs})
        self.pending = {p: self.m.label_segment(p, labels[p], length) for p in self.m.outputs}

    def early_output(self, port):
        return None if self.pending is None else self.pending[port]

    def advance(self, inputs, length):
        if self.pending is None:
            raise RuntimeError(f"{self.m.name}: advance before prepare")
        out, self.pending = self.pending, None
        return {"in": dict(inputs), "out": out}


class SamplerMachine(Machine):
    """Guards evaluated on left limits at every ``κτ``, emitted as label streams.

    The state records the observed input sections and the emitted label
    streams; it is a valid state when each emitted label is what the guard
    gives on the inputs' left limits at that instant.
    """

    samples = True

    def __init__(self, name: str, inputs: Mapping[str, str], outputs: Mapping[str, str],
                 guard: Callable[[Mapping[str, tuple]], Mapping[str, Hashable]],
                 data: Mapping[str, HybridSheafDatum], period):
        self.name = name
        self.inputs = dict(inputs)
        self.outputs = dict(outputs)
        self.guard = guard
        self.data = dict(data)
        self.period = duration(period)

    def fire(self, points: Mapping[str, tuple]) -> dict:
        labels = dict(self.guard(points))
        for port in self.outputs:
            if port not in labels:
                raise ValueError(f"{self.name}: guard produced no label for {port!r}")
        return labels

    def label_segment(self, port: str, label, length: Fraction) -> HybridSection:
        H = self.data[port]
        jump = H.jump(label)
        if length == 0:
            return HybridSection((jump,))
        tgt = H.edges[label][1]
        return HybridSection((jump, identity_edge((tgt, length))), (FlowCell(length, H.flow(tgt, 0)),))

    def p_i(self, state, port=None):
        return state["in"][self._port(self.inputs, port)]

    def p_o(self, state, port=None):
        return state["out"][self._port(self.outputs, port)]

    def is_state(self, state) -> bool:
        try:
            ins, outs = state["in"], state["out"]
            streams = [outs[p] for p in self.outputs]
        except (KeyError, TypeError):
            return False
        if not all(realize(self.data[p]).member(outs[p]) for p in self.outputs):
            return False
        times = {tuple(e.time for e in s.jumps()) for s in streams}
        if len(times) != 1:
            return False
        for t in times.pop():
            points = {p: ins[p].point_at(t, "left") for p in self.inputs}
            labels = self.fire(points)
            for p in self.outputs:
                e = outs[p].edges[outs[p].locate(t)[1]]
                if e.label != labels[p]:
                    return False
        return True

    def stepper(self):
        return _SamplerStepper(self)
