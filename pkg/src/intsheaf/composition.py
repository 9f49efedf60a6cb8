"""Wiring diagrams, composite machines and their co-simulation.

A composite's state is a tuple (here a dict keyed by box name) of component
states that agree on every wire: the pushed-forward output of the source box
equals the input consumed by the target box. :func:`check_compatibility`
tests that condition directly; :class:`ComposedMachine` constructs states
satisfying it by running the components period by period.

One period of execution has three phases. Samplers read the left limits of
their inputs and fix their output labels for the period; every other box
then advances in dependency order (wires out of samplers do not count as
dependencies); finally samplers record what they observed. A cycle that
does not pass through a sampler is an algebraic loop and is rejected.

Wiring text::

    box logic : acas { in cmd:Loop; out adv:K }
    wire logic.adv -> pilot.adv via phi
    external in logic.cmd as labels
    external out plane.y
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

from .machines import (
    Machine,
    MappingError,
    SheafMorphism,
    Stepper,
    run,
    state_length,
)
from .sections import (
    EPS_V,
    HybridSection,
    edges_match,
    identity_edge,
    values_match,
)


class WiringError(ValueError):
    """A wiring diagram does not parse or does not validate."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line, self.column = line, column
        where = f"line {line}, col {column}: " if line is not None else ""
        super().__init__(where + message)


class WiringTypeError(WiringError):
    pass


class CausalityError(RuntimeError):
    """The wires form a loop that no sampling point breaks."""


# -- diagrams -----------------------------------------------------------------


@dataclass(frozen=True)
class BoxDecl:
    name: str
    ref: str
    inputs: dict
    outputs: dict
    line: int | None = None
    column: int | None = None


@dataclass(frozen=True)
class WireDecl:
    src: tuple  # (box, port)
    tgt: tuple
    via: str | None = None
    line: int | None = None
    column: int | None = None


@dataclass(frozen=True)
class ExternalDecl:
    direction: str  # "in" | "out"
    box: str
    port: str
    alias: str | None = None
    line: int | None = None
    column: int | None = None


@dataclass
class WiringDiagram:
    boxes: dict = field(default_factory=dict)
    wires: list = field(default_factory=list)
    externals: list = field(default_factory=list)

    @property
    def external_inputs(self) -> list[ExternalDecl]:
        return [x for x in self.externals if x.direction == "in"]

    @property
    def external_outputs(self) -> list[ExternalDecl]:
        return [x for x in self.externals if x.direction == "out"]

    def to_text(self) -> str:
        lines = []
        for b in self.boxes.values():
            ports = [f"in {p}:{t}" for p, t in b.inputs.items()] + [f"out {p}:{t}" for p, t in b.outputs.items()]
            lines.append(f"box {b.name} : {b.ref} {{ {'; '.join(ports)} }}")
        for w in self.wires:
            via = f" via {w.via}" if w.via else ""
            lines.append(f"wire {w.src[0]}.{w.src[1]} -> {w.tgt[0]}.{w.tgt[1]}{via}")
        for x in self.externals:
            alias = f" as {x.alias}" if x.alias else ""
            lines.append(f"external {x.direction} {x.box}.{x.port}{alias}")
        return "\n".join(lines) + ("\n" if lines else "")


_TOKEN = re.compile(r"\s+|#[^\n]*|(?P<arrow>->)|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<punct>[{}.:;,])")


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    column: int


def _tokenize(text: str) -> list[_Tok]:
    toks, pos, line, col = [], 0, 1, 1
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise WiringError(f"unexpected character {text[pos]!r}", line, col)
        chunk = m.group(0)
        if m.lastgroup:
            toks.append(_Tok(m.lastgroup, chunk, line, col))
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            col = len(chunk) - chunk.rfind("\n")
        else:
            col += len(chunk)
        pos = m.end()
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0
        lines = text.splitlines() or [""]
        self.eof = (len(lines), len(lines[-1]) + 1)

    def peek(self) -> _Tok | None:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def error(self, message: str, tok: _Tok | None = None):
        tok = tok or self.peek()
        line, col = (tok.line, tok.column) if tok else self.eof
        raise WiringError(message, line, col)

    def take(self, kind: str | None = None, text: str | None = None) -> _Tok:
        tok = self.peek()
        want = text or kind
        if tok is None:
            self.error(f"expected {want!r}, found end of input")
        if (kind and tok.kind != kind) or (text and tok.text != text):
            self.error(f"expected {want!r}, found {tok.text!r}", tok)
        self.i += 1
        return tok

    def accept(self, text: str) -> bool:
        tok = self.peek()
        if tok is not None and tok.text == text:
            self.i += 1
            return True
        return False

    def endpoint(self) -> tuple[tuple[str, str], _Tok]:
        box = self.take("ident")
        self.take("punct", ".")
        port = self.take("ident")
        return (box.text, port.text), box

    def parse(self) -> WiringDiagram:
        d = WiringDiagram()
        while self.peek() is not None:
            tok = self.take("ident")
            if tok.text == "box":
                self.box(d, tok)
            elif tok.text == "wire":
                src, _ = self.endpoint()
                self.take("arrow")
                tgt, _ = self.endpoint()
                via = self.take("ident").text if self.accept("via") else None
                d.wires.append(WireDecl(src, tgt, via, tok.line, tok.column))
            elif tok.text == "external":
                direction = self.take("ident")
                if direction.text not in ("in", "out"):
                    self.error("expected 'in' or 'out'", direction)
                (box, port), _ = self.endpoint()
                alias = self.take("ident").text if self.accept("as") else None
                d.externals.append(ExternalDecl(direction.text, box, port, alias, tok.line, tok.column))
            else:
                self.error(f"expected 'box', 'wire' or 'external', found {tok.text!r}", tok)
            self.accept(";")
        return d

    def box(self, d: WiringDiagram, kw: _Tok):
        name = self.take("ident")
        if name.text in d.boxes:
            self.error(f"duplicate box {name.text!r}", name)
        self.take("punct", ":")
        ref = self.take("ident")
        self.take("punct", "{")
        inputs, outputs = {}, {}
        while not self.accept("}"):
            direction = self.take("ident")
            if direction.text not in ("in", "out"):
                self.error("expected 'in' or 'out'", direction)
            port = self.take("ident")
            self.take("punct", ":")
            typ = self.take("ident")
            if port.text in inputs or port.text in outputs:
                self.error(f"duplicate port {port.text!r} on box {name.text!r}", port)
            (inputs if direction.text == "in" else outputs)[port.text] = typ.text
            if not (self.accept(";") or self.accept(",")):
                if self.peek() is None or self.peek().text != "}":
                    self.error("expected ';' or '}'")
        d.boxes[name.text] = BoxDecl(name.text, ref.text, inputs, outputs, kw.line, kw.column)


def parse_wiring(text: str, machines: Mapping[str, Machine] | None = None,
                 morphisms: Mapping[str, SheafMorphism] | None = None) -> WiringDiagram:
    """Parse and validate; with registries, machine ports and morphism types are checked too."""
    d = _Parser(text).parse()
    validate_wiring(d, machines, morphisms)
    return d


def external_names(d: WiringDiagram) -> dict[tuple[str, str], str]:
    """``(direction, box, port) -> outer port name``: the port name, or ``box.port`` on a clash."""
    out = {}
    for direction in ("in", "out"):
        decls = [x for x in d.externals if x.direction == direction]
        counts: dict[str, int] = {}
        for x in decls:
            counts[x.port] = counts.get(x.port, 0) + 1
        for x in decls:
            out[(direction, x.box, x.port)] = x.alias or (x.port if counts[x.port] == 1 else f"{x.box}.{x.port}")
    return out


def validate_wiring(d: WiringDiagram, machines: Mapping[str, Machine] | None = None,
                    morphisms: Mapping[str, SheafMorphism] | None = None) -> None:
    def port_type(endpoint, direction, where):
        box, port = endpoint
        if box not in d.boxes:
            raise WiringError(f"undeclared box {box!r}", where.line, where.column)
        ports = d.boxes[box].inputs if direction == "in" else d.boxes[box].outputs
        if port not in ports:
            raise WiringError(f"box {box!r} has no {direction}put port {port!r}", where.line, where.column)
        return ports[port]

    if machines is not None:
        for b in d.boxes.values():
            if b.ref not in machines:
                raise WiringError(f"unknown machine {b.ref!r}", b.line, b.column)
            m = machines[b.ref]
            for declared, actual, kind in ((b.inputs, m.inputs, "input"), (b.outputs, m.outputs, "output")):
                if set(declared) != set(actual):
                    raise WiringError(
                        f"box {b.name!r} declares {kind} ports {sorted(declared)}, machine {b.ref!r} has {sorted(actual)}",
                        b.line, b.column,
                    )
                for p, t in declared.items():
                    if actual[p] != t:
                        raise WiringTypeError(
                            f"port {b.name}.{p} declared {t!r} but machine {b.ref!r} has {actual[p]!r}", b.line, b.column
                        )
    fed: dict[tuple, WireDecl] = {}
    for w in d.wires:
        src_t = port_type(w.src, "out", w)
        tgt_t = port_type(w.tgt, "in", w)
        if w.tgt in fed:
            raise WiringError(f"input {w.tgt[0]}.{w.tgt[1]} already has a wire (line {fed[w.tgt].line})", w.line, w.column)
        fed[w.tgt] = w
        if w.via is None:
            if src_t != tgt_t:
                raise WiringTypeError(f"wire joins {src_t!r} to {tgt_t!r} without a morphism", w.line, w.column)
        elif morphisms is not None:
            if w.via not in morphisms:
                raise WiringError(f"unknown morphism {w.via!r}", w.line, w.column)
            g = morphisms[w.via]
            if (g.source, g.target) != (src_t, tgt_t):
                raise WiringTypeError(
                    f"morphism {w.via!r} maps {g.source!r} to {g.target!r}, wire needs {src_t!r} to {tgt_t!r}",
                    w.line, w.column,
                )
    seen = set()
    for x in d.externals:
        port_type((x.box, x.port), x.direction, x)
        key = (x.direction, x.box, x.port)
        if key in seen:
            raise WiringError(f"external {x.direction} {x.box}.{x.port} declared twice", x.line, x.column)
        seen.add(key)
        if x.direction == "in" and (x.box, x.port) in fed:
            raise WiringError(f"input {x.box}.{x.port} is both wired and external", x.line, x.column)
    for b in d.boxes.values():
        for p in b.inputs:
            if (b.name, p) not in fed and ("in", b.name, p) not in seen:
                raise WiringError(f"input {b.name}.{p} is neither wired nor external", b.line, b.column)
    names = external_names(d)
    for direction in ("in", "out"):
        taken = [n for (dr, _, _), n in names.items() if dr == direction]
        dup = {n for n in taken if taken.count(n) > 1}
        if dup:
            raise WiringError(f"external {direction}put name {sorted(dup)[0]!r} used twice")


# -- composite machines -----------------------------------------------------------


@dataclass(frozen=True)
class Wire:
    src_box: str
    src_port: str
    tgt_box: str
    tgt_port: str
    morphism: SheafMorphism | None = None

    def push(self, s: HybridSection) -> HybridSection:
        return s if self.morphism is None else self.morphism(s)

    def push_point(self, p: tuple) -> tuple:
        return p if self.morphism is None else self.morphism.point(p)

    def __str__(self):
        via = f" via {self.morphism.name}" if self.morphism is not None else ""
        return f"{self.src_box}.{self.src_port} -> {self.tgt_box}.{self.tgt_port}{via}"


class ComposedMachine(Machine):
    """Components joined along wires; itself a machine, so composites nest."""

    def __init__(self, boxes: Mapping[str, Machine], wires: Sequence[Wire],
                 external_in: Mapping[str, tuple[str, str]], external_out: Mapping[str, tuple[str, str]],
                 name: str = "composite"):
        self.name = name
        self.boxes = dict(boxes)
        self.wires = list(wires)
        self.external_in = dict(external_in)
        self.external_out = dict(external_out)
        self.inputs = {n: self.boxes[b].inputs[p] for n, (b, p) in self.external_in.items()}
        self.outputs = {n: self.boxes[b].outputs[p] for n, (b, p) in self.external_out.items()}
        periods = {m.period for m in self.boxes.values() if m.period is not None}
        if len(periods) > 1:
            raise WiringError(f"{name}: components disagree on the period: {sorted(periods)}")
        self.period = periods.pop() if periods else None
        self.feeding = {(w.tgt_box, w.tgt_port): w for w in self.wires}
        self.ext_feeding = {bp: n for n, bp in self.external_in.items()}
        for b, m in self.boxes.items():
            for p in m.inputs:
                if (b, p) not in self.feeding and (b, p) not in self.ext_feeding:
                    raise WiringError(f"{name}: input {b}.{p} is neither wired nor external")

    @classmethod
    def from_diagram(cls, d: WiringDiagram, machines: Mapping[str, Machine],
                     morphisms: Mapping[str, SheafMorphism] | None = None, name: str = "composite") -> "ComposedMachine":
        morphisms = morphisms or {}
        validate_wiring(d, machines, morphisms)
        boxes = {b.name: machines[b.ref] for b in d.boxes.values()}
        wires = [Wire(w.src[0], w.src[1], w.tgt[0], w.tgt[1], morphisms[w.via] if w.via else None) for w in d.wires]
        names = external_names(d)
        ext_in = {names[("in", x.box, x.port)]: (x.box, x.port) for x in d.external_inputs}
        ext_out = {names[("out", x.box, x.port)]: (x.box, x.port) for x in d.external_outputs}
        return cls(boxes, wires, ext_in, ext_out, name)

    # legs

    def p_i(self, state, port=None):
        b, p = self.external_in[self._port(self.inputs, port)]
        return self.boxes[b].p_i(state[b], p)

    def p_o(self, state, port=None):
        b, p = self.external_out[self._port(self.outputs, port)]
        return self.boxes[b].p_o(state[b], p)

    def is_state(self, state) -> bool:
        try:
            if set(state) != set(self.boxes):
                return False
            if not all(self.boxes[b].is_state(state[b]) for b in self.boxes):
                return False
            return all(r.ok for r in check_compatibility(self, state, nested=False))
        except (TypeError, KeyError, ValueError, MappingError):
            return False

    def component_states(self, state, prefix: str = "") -> dict:
        """Leaf component states, nested composites flattened (``outer/inner`` keys)."""
        out = {}
        for b, m in self.boxes.items():
            key = f"{prefix}{b}"
            if isinstance(m, ComposedMachine):
                out.update(m.component_states(state[b], key + "/"))
            else:
                out[key] = state[b]
        return out

    def leaf_states(self, state) -> dict:
        """Leaf component states keyed by their own box name (names must be unique)."""
        out = {}
        for key, s in self.component_states(state).items():
            leaf = key.rsplit("/", 1)[-1]
            if leaf in out:
                raise ValueError(f"box name {leaf!r} occurs twice")
            out[leaf] = s
        return out

    # scheduling

    def schedule(self) -> list[str]:
        """Non-sampling boxes in dependency order; wires out of samplers are cut."""
        deps = {b: set() for b, m in self.boxes.items() if not m.samples}
        for w in self.wires:
            if w.tgt_box in deps and w.src_box in deps:
                deps[w.tgt_box].add(w.src_box)
        order, done = [], set()
        while deps:
            ready = sorted(b for b, d in deps.items() if d <= done)
            if not ready:
                cycle = sorted(deps)
                raise CausalityError(f"{self.name}: algebraic loop through {', '.join(cycle)}")
            for b in ready:
                order.append(b)
                done.add(b)
                del deps[b]
        return order

    def samplers(self) -> list[str]:
        return [b for b, m in self.boxes.items() if m.samples]

    def stepper(self) -> "_ComposedStepper":
        return _ComposedStepper(self)

    def execute(self, inputs=None, horizon=None):
        if isinstance(inputs, HybridSection):
            inputs = {self._port(self.inputs, None): inputs}
        return run(self, dict(inputs or {}), horizon)


class _ComposedStepper(Stepper):
    def __init__(self, cm: ComposedMachine):
        self.cm = cm
        self.order = cm.schedule()
        self.steppers = {b: m.stepper() for b, m in cm.boxes.items()}
        self.upstream = None

    def _point(self, box: str, port: str, upstream, visiting=()) -> tuple:
        """Left limit of a box input at the start of the current segment."""
        key = (box, port)
        if key in self.cm.ext_feeding:
            return upstream(self.cm.ext_feeding[key])
        w = self.cm.feeding[key]
        if w.src_box in visiting:
            raise CausalityError(f"{self.cm.name}: instantaneous loop through {w.src_box}")
        inner = lambda p: self._point(w.src_box, p, upstream, visiting + (w.src_box,))
        return w.push_point(self.steppers[w.src_box].output_point(w.src_port, inner))

    def output_point(self, port, upstream):
        b, p = self.cm.external_out[port]
        inner = lambda q: self._point(b, q, upstream, (b,))
        return self.steppers[b].output_point(p, inner)

    def prepare(self, upstream, length):
        for b, st in self.steppers.items():
            st.prepare(lambda p, b=b: self._point(b, p, upstream, (b,)), length)

    def advance(self, inputs, length):
        cm = self.cm
        outs: dict[tuple, HybridSection] = {}
        seg_states = {}

        def feed(box):
            m = cm.boxes[box]
            ins = {}
            for p in m.inputs:
                if (box, p) in cm.ext_feeding:
                    ins[p] = inputs[cm.ext_feeding[(box, p)]]
                else:
                    w = cm.feeding[(box, p)]
                    src = outs.get((w.src_box, w.src_port))
                    if src is None:
                        src = self.steppers[w.src_box].early_output(w.src_port)
                    if src is None:
                        raise CausalityError(f"{cm.name}: {w} is read before it is computed")
                    ins[p] = w.push(src)
            return ins

        for b in self.order:
            seg_states[b] = self.steppers[b].advance(feed(b), length)
            for p in cm.boxes[b].outputs:
                outs[(b, p)] = cm.boxes[b].p_o(seg_states[b], p)
        for b in cm.samplers():
            seg_states[b] = self.steppers[b].advance(feed(b), length)
        return {b: seg_states[b] for b in cm.boxes}


def compose_series(m1: Machine, g: SheafMorphism | None, m2: Machine, name: str | None = None,
                   names: tuple[str, str] | None = None) -> ComposedMachine:
    """``m1`` then ``m2`` along ``g``: the pullback of ``g ∘ p_o¹`` and ``p_i²``."""
    if len(m1.outputs) != 1 or len(m2.inputs) != 1:
        raise WiringError("series composition needs one output on the first machine and one input on the second")
    (out_port, out_t), = m1.outputs.items()
    (in_port, in_t), = m2.inputs.items()
    if g is None:
        if out_t != in_t:
            raise WiringTypeError(f"cannot feed {out_t!r} into {in_t!r} without a morphism")
    elif (g.source, g.target) != (out_t, in_t):
        raise WiringTypeError(f"morphism {g.name!r} maps {g.source!r} to {g.target!r}, need {out_t!r} to {in_t!r}")
    n1, n2 = names or (m1.name, m2.name)
    if n1 == n2:
        n1, n2 = n1 + "1", n2 + "2"
    wire = Wire(n1, out_port, n2, in_port, g)
    ext_in = {p: (n1, p) for p in m1.inputs}
    ext_out = {p: (n2, p) for p in m2.outputs}
    return ComposedMachine({n1: m1, n2: m2}, [wire], ext_in, ext_out, name or f"{n1};{n2}")


# -- compatibility ----------------------------------------------------------------


@dataclass(frozen=True)
class WireReport:
    wire: Wire
    ok: bool = True
    time: Fraction | None = None
    expected: object = None
    actual: object = None
    where: str = ""

    @property
    def name(self) -> str:
        return f"{self.where}/{self.wire}" if self.where else str(self.wire)

    def __str__(self):
        if self.ok:
            return f"{self.name}: ok"
        return f"{self.name}: mismatch at t={self.time}: pushed {self.expected!r}, consumed {self.actual!r}"


def _edge_at(s: HybridSection, t: Fraction):
    where, i = s.locate(t)
    if where == "edge":
        return s.edges[i]
    return identity_edge(s.cells[i].point(t - s.edges[i].time), t)


def first_mismatch(a: HybridSection, b: HybridSection, eps: float = EPS_V):
    """Earliest time where two sections of equal length differ, with both values; None if they agree.

    Edges are compared at every breakpoint of either section, cells at
    interior probe points; symbolic values compare exactly, floats within eps.
    """
    if a.length != b.length:
        raise ValueError(f"sections of length {a.length} and {b.length} cannot be compared")
    if a.equals(b, eps):
        return None
    times = sorted(set(a.times) | set(b.times))
    for i, t in enumerate(times):
        ea, eb = _edge_at(a, t), _edge_at(b, t)
        if not edges_match(ea, eb, eps):
            if values_match(ea.src, eb.src, eps) and not values_match(ea.tgt, eb.tgt, eps):
                return t, ea.tgt, eb.tgt
            return (t, ea.src, eb.src) if not values_match(ea.src, eb.src, eps) else (t, ea.label, eb.label)
        if i + 1 < len(times):
            nxt = times[i + 1]
            for w in (Fraction(1, 4), Fraction(1, 2), Fraction(3, 4)):
                u = t + (nxt - t) * w
                pa, pb = a.point_at(u), b.point_at(u)
                if not values_match(pa, pb, eps):
                    return t, a.point_at(t, "right"), b.point_at(t, "right")
    return None


def check_compatibility(cm: ComposedMachine, state, eps: float = EPS_V, nested: bool = True,
                        where: str = "") -> list[WireReport]:
    """Per wire: does the pushed-forward output equal the consumed input?

    With ``nested`` the wires inside composite components are reported too,
    tagged with the box path they live under.
    """
    lengths = {state_length(state[b]) for b in cm.boxes}
    if len(lengths) != 1:
        raise ValueError(f"component sections have different lengths: {sorted(lengths)}")
    reports = []
    for w in cm.wires:
        pushed = w.push(cm.boxes[w.src_box].p_o(state[w.src_box], w.src_port))
        consumed = cm.boxes[w.tgt_box].p_i(state[w.tgt_box], w.tgt_port)
        mm = first_mismatch(pushed, consumed, eps)
        reports.append(WireReport(w, where=where) if mm is None else WireReport(w, False, *mm, where=where))
    if nested:
        for b, m in cm.boxes.items():
            if isinstance(m, ComposedMachine):
                inner = f"{where}/{b}" if where else b
                reports.extend(check_compatibility(m, state[b], eps, True, inner))
    return reports
