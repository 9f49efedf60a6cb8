"""Safety contracts over sections, with sub-interval (Kripke-Joyal) semantics.

A formula is evaluated on every grid-aligned window ``[t_i, t_j]`` at once:
each node gets an upper-triangular boolean matrix ``M[i, j]``. Atoms and
``&``/``|`` act window by window; ``!f`` holds on a window when ``f`` holds on
no sub-window, and ``f => g`` when every sub-window satisfying ``f`` also
satisfies ``g``. The verdict is the entry for the full interval.

Atoms:

* value atoms (no derivative inside) hold on a window when they hold at
  every grid point of it, on both sides of any jump;
* derivative atoms hold vacuously on a single instant; on a longer window
  they use one-sided derivatives at the ends and both sides inside;
* ``P = climb`` compares a label channel; at a transition both labels of
  the pair must match.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .intervals import duration, format_duration, sub_interval
from .sections import HybridSection, restrict

EPS_C = 1e-6


class FormulaError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line, self.column = line, column
        where = ""
        if line is not None:
            where = f"line {line}, col {column}: " if line > 1 else f"col {column}: "
        super().__init__(where + message)


class DerivativeUndefined(ValueError):
    pass


class GridError(ValueError):
    pass


# -- syntax --------------------------------------------------------------------


class Expr:
    pass


@dataclass(frozen=True)
class Name(Expr):
    name: str
    line: int = 1
    column: int = 1


@dataclass(frozen=True)
class Num(Expr):
    value: float


@dataclass(frozen=True)
class Signal(Expr):
    channel: str


@dataclass(frozen=True)
class Deriv(Expr):
    channel: str
    line: int = 1
    column: int = 1


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


class Formula:
    pass


@dataclass(frozen=True)
class Top(Formula):
    pass


@dataclass(frozen=True)
class Bottom(Formula):
    pass


@dataclass(frozen=True)
class EqLabel(Formula):
    channel: str
    label: object


@dataclass(frozen=True)
class Compare(Formula):
    lhs: Expr
    rel: str
    rhs: Expr


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Not(Formula):
    arg: Formula


@dataclass(frozen=True)
class Implies(Formula):
    left: Formula
    right: Formula


def show(f) -> str:
    if isinstance(f, Top):
        return "true"
    if isinstance(f, Bottom):
        return "false"
    if isinstance(f, EqLabel):
        return f"{f.channel} = {f.label}"
    if isinstance(f, Compare):
        return f"{show(f.lhs)} {f.rel} {show(f.rhs)}"
    if isinstance(f, And):
        return f"({show(f.left)} & {show(f.right)})"
    if isinstance(f, Or):
        return f"({show(f.left)} | {show(f.right)})"
    if isinstance(f, Not):
        return f"!({show(f.arg)})"
    if isinstance(f, Implies):
        return f"({show(f.left)} => {show(f.right)})"
    if isinstance(f, Name):
        return f.name
    if isinstance(f, Num):
        return format(f.value, "g")
    if isinstance(f, Signal):
        return f.channel
    if isinstance(f, Deriv):
        return f"deriv({f.channel})"
    if isinstance(f, BinOp):
        return f"({show(f.left)} {f.op} {show(f.right)})"
    if isinstance(f, Neg):
        return f"-{show(f.arg)}"
    raise TypeError(f"not a formula: {f!r}")


_SYNONYMS = {"∧": "&", "∨": "|", "¬": "!", "⇒": "=>", "→": "=>", "⊤": "true", "⊥": "false", "≤": "<=", "≥": ">=", "≠": "!="}
_TOKENS = re.compile(
    r"(?P<ws>[ \t\r]+)|(?P<nl>\n)"
    r"|(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*)"
    r"|(?P<op>=>|!=|<=|>=|[=<>&|!()+\-*])"
)
_RELATIONS = ("=", "!=", "<=", ">=", "<", ">")


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    column: int


def _tokenize(text: str) -> list[_Tok]:
    for k, v in _SYNONYMS.items():
        text = text.replace(k, f" {v} ")
    out, pos, line, col = [], 0, 1, 1
    while pos < len(text):
        m = _TOKENS.match(text, pos)
        if not m:
            raise FormulaError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        if kind == "nl":
            line, col = line + 1, 1
        else:
            if kind != "ws":
                out.append(_Tok(kind, m.group(0), line, col))
            col += len(m.group(0))
        pos = m.end()
    out.append(_Tok("end", "", line, col))
    return out


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def fail(self, message: str, tok: _Tok | None = None):
        tok = tok or self.tok
        raise FormulaError(message, tok.line, tok.column)

    def eat(self, text: str) -> bool:
        if self.tok.kind == "op" and self.tok.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text: str):
        if not self.eat(text):
            found = self.tok.text or "end of input"
            self.fail(f"expected {text!r}, found {found!r}")

    def parse(self) -> Formula:
        f = self.implies()
        if self.tok.kind != "end":
            self.fail(f"unexpected {self.tok.text!r}")
        return f

    def implies(self) -> Formula:
        left = self.disj()
        if self.eat("=>"):
            return Implies(left, self.implies())
        return left

    def disj(self) -> Formula:
        f = self.conj()
        while self.eat("|"):
            f = Or(f, self.conj())
        return f

    def conj(self) -> Formula:
        f = self.unary()
        while self.eat("&"):
            f = And(f, self.unary())
        return f

    def unary(self) -> Formula:
        if self.eat("!"):
            return Not(self.unary())
        return self.primary()

    def primary(self) -> Formula:
        tok = self.tok
        if tok.kind == "ident" and tok.text in ("true", "false"):
            self.i += 1
            return Top() if tok.text == "true" else Bottom()
        if tok.kind == "op" and tok.text == "(":
            mark, first = self.i, None
            try:
                self.i += 1
                f = self.implies()
                self.expect(")")
                if not (self.tok.kind == "op" and (self.tok.text in _RELATIONS or self.tok.text in "+-*")):
                    return f
            except FormulaError as exc:
                first = exc
            self.i = mark  # a parenthesized arithmetic expression
            try:
                return self.comparison()
            except FormulaError as exc:
                # report whichever reading got further into the text
                if first is not None and (first.line, first.column) > (exc.line, exc.column):
                    raise first from None
                raise
        return self.comparison()

    def comparison(self) -> Formula:
        lhs = self.expr()
        tok = self.tok
        if not (tok.kind == "op" and tok.text in _RELATIONS):
            self.fail(f"expected a comparison, found {tok.text or 'end of input'!r}")
        self.i += 1
        return Compare(lhs, tok.text, self.expr())

    def expr(self) -> Expr:
        e = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.tok.text
            self.i += 1
            e = BinOp(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.factor()
        while self.eat("*"):
            e = BinOp("*", e, self.factor())
        return e

    def factor(self) -> Expr:
        tok = self.tok
        if self.eat("-"):
            return Neg(self.factor())
        if tok.kind == "num":
            self.i += 1
            return Num(float(tok.text))
        if tok.kind == "ident":
            self.i += 1
            if tok.text == "deriv":
                self.expect("(")
                ch = self.tok
                if ch.kind != "ident":
                    self.fail("deriv needs a channel name")
                self.i += 1
                self.expect(")")
                return Deriv(ch.text, ch.line, ch.column)
            return Name(tok.text, tok.line, tok.column)
        if self.eat("("):
            e = self.expr()
            self.expect(")")
            return e
        self.fail(f"expected a value, found {tok.text or 'end of input'!r}")


def parse_formula(text: str) -> Formula:
    """Parse ``!`` > ``&`` > ``|`` > ``=>`` (right associative)."""
    return _Parser(text).parse()


# -- channels ------------------------------------------------------------------


@dataclass(frozen=True)
class Channel:
    """A scalar (or label) view of a section.

    ``kind`` selects how a point is read: ``label`` takes ``point[0]``,
    ``state`` takes ``point[1][index]`` (``(u, x)`` points of a state
    section) and ``vector`` takes ``point[0][index]``.
    """

    section: HybridSection
    kind: str = "vector"
    index: int = 0

    @classmethod
    def label(cls, s: HybridSection) -> "Channel":
        return cls(s, "label")

    @classmethod
    def state(cls, s: HybridSection, index: int) -> "Channel":
        return cls(s, "state", index)

    @classmethod
    def vector(cls, s: HybridSection, index: int = 0) -> "Channel":
        return cls(s, "vector", index)

    @property
    def is_label(self) -> bool:
        return self.kind == "label"

    def read(self, point):
        if self.kind == "label":
            return point[0]
        if self.kind == "state":
            return float(point[1][self.index])
        v = point[0]
        return float(v[self.index] if isinstance(v, tuple) else v)

    def value(self, t, side: str = "right"):
        return self.read(self.section.point_at(Fraction(t), side))

    def derivative(self, t, side: str) -> float:
        """One-sided derivative from the cell on ``side`` of t."""
        if self.is_label:
            raise DerivativeUndefined("label channels have no derivative")
        s, t = self.section, Fraction(t)
        where, i = s.locate(t)
        if where == "cell":
            j = i
        else:
            j = i - 1 if side == "left" else i
            if not 0 <= j < len(s.cells):
                raise DerivativeUndefined(f"no cell on the {side} of t = {format_duration(t)}")
        cell, t0 = s.cells[j], s.edges[j].time
        d = np.atleast_1d(cell.flow.derivative(t - t0, cell.length, side if where == "edge" else None))
        if self.kind == "state":
            return float(d[self.index])
        return float(d[self.index] if d.size > 1 else d[0])


def deriv(channel: Channel, t) -> float:
    """Derivative at a time interior to a cell (analytic for ODE flows)."""
    where, _ = channel.section.locate(Fraction(t))
    if where == "edge":
        raise DerivativeUndefined(f"t = {format_duration(Fraction(t))} is a breakpoint")
    return channel.derivative(t, "right")


# -- resolution ------------------------------------------------------------------


def _names(f) -> set[str]:
    if isinstance(f, (Name,)):
        return {f.name}
    if isinstance(f, (Deriv, Signal)):
        return {f.channel}
    if isinstance(f, (BinOp, And, Or, Implies)):
        return _names(f.left) | _names(f.right)
    if isinstance(f, (Neg, Not)):
        return _names(f.arg)
    if isinstance(f, Compare):
        return _names(f.lhs) | _names(f.rhs)
    if isinstance(f, EqLabel):
        return {f.channel}
    return set()


def resolve(f: Formula, channels: Mapping[str, Channel], bindings: Mapping[str, float] | None = None) -> Formula:
    """Bind names to channels or constants; ``P = climb`` with ``climb`` unbound becomes a label test."""
    bindings = bindings or {}

    def expr(e):
        if isinstance(e, Name):
            if e.name in channels:
                if channels[e.name].is_label:
                    raise FormulaError(f"label channel {e.name!r} used as a number", e.line, e.column)
                return Signal(e.name)
            if e.name in bindings:
                return Num(float(bindings[e.name]))
            raise FormulaError(f"undeclared channel {e.name!r}", e.line, e.column)
        if isinstance(e, Deriv):
            if e.channel not in channels:
                raise FormulaError(f"undeclared channel {e.channel!r}", e.line, e.column)
            if channels[e.channel].is_label:
                raise FormulaError(f"cannot differentiate label channel {e.channel!r}", e.line, e.column)
            return e
        if isinstance(e, BinOp):
            return BinOp(e.op, expr(e.left), expr(e.right))
        if isinstance(e, Neg):
            return Neg(expr(e.arg))
        return e

    def label_test(lhs, rhs):
        if isinstance(lhs, Name) and lhs.name in channels and channels[lhs.name].is_label:
            if isinstance(rhs, Name) and rhs.name not in channels:
                return EqLabel(lhs.name, bindings.get(rhs.name, rhs.name))
            raise FormulaError(f"label channel {lhs.name!r} must be compared with a label", lhs.line, lhs.column)
        return None

    def go(f):
        if isinstance(f, (Top, Bottom, EqLabel)):
            return f
        if isinstance(f, Compare):
            if f.rel == "=":
                lab = label_test(f.lhs, f.rhs) or label_test(f.rhs, f.lhs)
                if lab is not None:
                    return lab
            return Compare(expr(f.lhs), f.rel, expr(f.rhs))
        if isinstance(f, And):
            return And(go(f.left), go(f.right))
        if isinstance(f, Or):
            return Or(go(f.left), go(f.right))
        if isinstance(f, Implies):
            return Implies(go(f.left), go(f.right))
        if isinstance(f, Not):
            return Not(go(f.arg))
        raise TypeError(f"not a formula: {f!r}")

    return go(f)


# -- grids -------------------------------------------------------------------------


def channel_length(channels: Mapping[str, Channel]) -> Fraction:
    lengths = {c.section.length for c in channels.values()}
    if len(lengths) != 1:
        raise GridError(f"channels have different lengths: {sorted(map(str, lengths))}")
    return lengths.pop()


def breakpoints(channels: Mapping[str, Channel]) -> list[Fraction]:
    return sorted({t for c in channels.values() for t in c.section.times})


def make_grid(channels: Mapping[str, Channel], density: int = 10) -> list[Fraction]:
    """Breakpoints of every channel with each gap split into ``density`` parts."""
    if density < 1:
        raise GridError("grid density must be at least 1")
    bps = breakpoints(channels)
    grid = [bps[0]]
    for a, b in zip(bps, bps[1:]):
        grid += [a + (b - a) * Fraction(k, density) for k in range(1, density + 1)]
    return grid


def check_grid(grid: Sequence, channels: Mapping[str, Channel]) -> list[Fraction]:
    grid = [Fraction(t) for t in grid]
    if grid != sorted(set(grid)):
        raise GridError("grid must be strictly increasing")
    L = channel_length(channels)
    if not grid or grid[0] != 0 or grid[-1] != L:
        raise GridError(f"grid must start at 0 and end at {format_duration(L)}")
    missing = set(breakpoints(channels)) - set(grid)
    if missing:
        raise GridError(f"grid is coarser than the breakpoints; missing t = {format_duration(min(missing))}")
    return grid


# -- evaluation ----------------------------------------------------------------------


def _window_all(ok: np.ndarray) -> np.ndarray:
    """``W[i, j] = all(ok[i..j])`` for ``i <= j``."""
    m = len(ok)
    bad = np.concatenate([[0], np.cumsum(~ok)])
    W = (bad[None, 1:] - bad[:m, None]) == 0
    return np.triu(W)


def _exists_sub(F: np.ndarray) -> np.ndarray:
    """``E[i, j]``: F holds on some ``[a, b]`` with ``i <= a <= b <= j``."""
    E = np.logical_or.accumulate(F[::-1], axis=0)[::-1]
    return np.triu(np.logical_or.accumulate(E, axis=1))


class _Evaluator:
    def __init__(self, channels: Mapping[str, Channel], grid: list[Fraction], eps: float):
        self.channels, self.grid, self.eps = channels, grid, eps
        self.m = len(grid)
        self.upper = np.triu(np.ones((self.m, self.m), dtype=bool))
        self.cache: dict = {}
        self._sides: dict = {}

    def sides(self, name: str, what: str):
        """Per grid point values on the left and right (``what`` = value | deriv)."""
        key = (name, what)
        if key not in self._sides:
            ch = self.channels[name]
            L = ch.section.length
            left, right = [], []
            for t in self.grid:
                if what == "value":
                    left.append(ch.value(t, "left"))
                    right.append(ch.value(t, "right"))
                else:
                    left.append(ch.derivative(t, "left") if t > 0 else math.nan)
                    right.append(ch.derivative(t, "right") if t < L else math.nan)
            if ch.is_label:
                self._sides[key] = (left, right)
            else:
                self._sides[key] = (np.array(left, dtype=float), np.array(right, dtype=float))
        return self._sides[key]

    def expr(self, e: Expr, side: int) -> np.ndarray:
        if isinstance(e, Num):
            return np.full(self.m, e.value)
        if isinstance(e, Signal):
            return self.sides(e.channel, "value")[side]
        if isinstance(e, Deriv):
            return self.sides(e.channel, "deriv")[side]
        if isinstance(e, Neg):
            return -self.expr(e.arg, side)
        if isinstance(e, BinOp):
            a, b = self.expr(e.left, side), self.expr(e.right, side)
            return a + b if e.op == "+" else a - b if e.op == "-" else a * b
        raise TypeError(f"unresolved expression {e!r}")

    def relation(self, rel: str, d: np.ndarray) -> np.ndarray:
        eps = self.eps
        with np.errstate(invalid="ignore"):
            if rel == "=":
                return np.abs(d) <= eps
            if rel == "!=":
                return np.abs(d) > eps
            if rel == "<=":
                return d <= eps
            if rel == ">=":
                return d >= -eps
            if rel == "<":
                return d < 0
            if rel == ">":
                return d > 0
        raise FormulaError(f"unknown relation {rel!r}")

    def eval(self, f: Formula) -> np.ndarray:
        key = id(f)
        if key in self.cache:
            return self.cache[key][1]
        M = self._eval(f)
        self.cache[key] = (f, M)
        return M

    def _eval(self, f: Formula) -> np.ndarray:
        if isinstance(f, Top):
            return self.upper.copy()
        if isinstance(f, Bottom):
            return np.zeros_like(self.upper)
        if isinstance(f, EqLabel):
            left, right = self.sides(f.channel, "value")
            ok = np.array([a == f.label and b == f.label for a, b in zip(left, right)], dtype=bool)
            return _window_all(ok)
        if isinstance(f, Compare):
            okL = self.relation(f.rel, self.expr(f.lhs, 0) - self.expr(f.rhs, 0))
            okR = self.relation(f.rel, self.expr(f.lhs, 1) - self.expr(f.rhs, 1))
            if not _has_deriv(f):
                return _window_all(okL & okR)
            both = okL & okR
            inner = np.concatenate([[0], np.cumsum(~both)])
            m = self.m
            i = np.arange(m)[:, None]
            j = np.arange(m)[None, :]
            # no failure strictly between i and j
            interior = (inner[np.maximum(j, i + 1)] - inner[np.minimum(i + 1, m)]) == 0
            M = okR[:, None] & okL[None, :] & interior & (j > i)
            M |= np.eye(m, dtype=bool)
            return M
        if isinstance(f, And):
            return self.eval(f.left) & self.eval(f.right)
        if isinstance(f, Or):
            return self.eval(f.left) | self.eval(f.right)
        if isinstance(f, Not):
            return self.upper & ~_exists_sub(self.eval(f.arg))
        if isinstance(f, Implies):
            bad = self.eval(f.left) & ~self.eval(f.right)
            return self.upper & ~_exists_sub(bad)
        raise TypeError(f"not a formula: {f!r}")

    def shortest(self, F: np.ndarray, i: int, j: int) -> tuple[int, int]:
        idx = np.argwhere(F[i : j + 1, i : j + 1])
        best = min(((self.grid[b + i] - self.grid[a + i], self.grid[a + i], a + i, b + i) for a, b in idx))
        return best[2], best[3]

    def witness(self, f: Formula, i: int, j: int) -> tuple[int, int, Formula]:
        if isinstance(f, And):
            if not self.eval(f.left)[i, j]:
                return self.witness(f.left, i, j)
            return self.witness(f.right, i, j)
        if isinstance(f, Not):
            a, b = self.shortest(self.eval(f.arg), i, j)
            return a, b, f
        if isinstance(f, Implies):
            a, b = self.shortest(self.eval(f.left) & ~self.eval(f.right), i, j)
            return a, b, f
        return i, j, f


def _has_deriv(e) -> bool:
    if isinstance(e, Deriv):
        return True
    if isinstance(e, Compare):
        return _has_deriv(e.lhs) or _has_deriv(e.rhs)
    if isinstance(e, BinOp):
        return _has_deriv(e.left) or _has_deriv(e.right)
    if isinstance(e, Neg):
        return _has_deriv(e.arg)
    return False


@dataclass
class SatisfactionResult:
    holds: bool
    formula: str
    witness: tuple[Fraction, Fraction] | None = None
    failing: str | None = None  # the subformula the witness refutes
    values: dict = field(default_factory=dict)
    group: str | None = None
    grid: list = field(default_factory=list, repr=False)

    def __bool__(self):
        return self.holds

    def describe(self) -> str:
        tag = f"[{self.group}] " if self.group else ""
        if self.holds:
            return f"{tag}holds: {self.formula}"
        a, b = self.witness
        vals = ", ".join(f"{k}={v}" for k, v in self.values.items())
        return (
            f"{tag}fails: {self.formula}\n  witness [{format_duration(a)}, {format_duration(b)}]"
            f" refutes {self.failing}" + (f"\n  values at start: {vals}" if vals else "")
        )


def _evaluate(f: Formula, channels: Mapping[str, Channel], grid, eps, text, group=None) -> SatisfactionResult:
    ev = _Evaluator(channels, grid, eps)
    M = ev.eval(f)
    last = len(grid) - 1
    if M[0, last]:
        return SatisfactionResult(True, text, group=group, grid=grid)
    a, b, sub = ev.witness(f, 0, last)
    ta, tb = grid[a], grid[b]
    values = {}
    for name in sorted(_names(sub)):
        if name in channels:
            values[name] = channels[name].value(ta, "right")
    return SatisfactionResult(False, text, (ta, tb), show(sub), values, group, grid)


def _groups(names: set[str], channels: Mapping[str, Channel]) -> list[str]:
    prefixes = sorted({k.rsplit(".", 1)[0] for k in channels if "." in k})
    return [p for p in prefixes if all(f"{p}.{n}" in channels for n in names)]


def _free_channels(f: Formula, channels, bindings) -> set[str]:
    """Unqualified names that must be channels (not bindings, not label literals)."""
    out = set()

    def expr_names(e):
        return {n for n in _names(e) if n not in bindings}

    def go(f):
        if isinstance(f, Compare):
            lhs, rhs = f.lhs, f.rhs
            if f.rel == "=" and isinstance(lhs, Name) and isinstance(rhs, Name):
                out.add(lhs.name)  # rhs may be a label literal
                return
            out.update(expr_names(lhs) | expr_names(rhs))
        elif isinstance(f, (And, Or, Implies)):
            go(f.left)
            go(f.right)
        elif isinstance(f, Not):
            go(f.arg)

    go(f)
    return {n for n in out if n not in channels}


def check(formula, channels: Mapping[str, Channel], grid: Sequence | None = None, density: int = 10,
          bindings: Mapping[str, float] | None = None, eps: float = EPS_C) -> SatisfactionResult:
    """Evaluate a formula (text or AST) on the full interval.

    Unqualified names missing from ``channels`` are looked up per group
    ``g.name``; the formula must then hold for every group, and a failure
    reports the first failing group.
    """
    bindings = dict(bindings or {})
    text = formula if isinstance(formula, str) else show(formula)
    f = parse_formula(formula) if isinstance(formula, str) else formula
    channels = dict(channels)
    if not channels:
        raise FormulaError("no channels to evaluate against")
    groups = _group_channels(f, channels, bindings)
    if groups[0][0] is None:
        return _check_one(f, channels, grid, density, bindings, eps, text, None)
    results = [_check_one(f, local, grid, density, bindings, eps, text, g) for g, local in groups]
    for r in results:
        if not r.holds:
            return r
    results[0].group = ", ".join(g for g, _ in groups)
    return results[0]


def _group_channels(f: Formula, channels: Mapping[str, Channel], bindings) -> list[tuple[str | None, dict]]:
    channel_length(channels)
    free = _free_channels(f, channels, bindings)
    if not free:
        return [(None, dict(channels))]
    groups = _groups(free, channels)
    if not groups:
        raise FormulaError(f"undeclared channel {sorted(free)[0]!r}")
    out = []
    for g in groups:
        local = {k[len(g) + 1:]: v for k, v in channels.items() if k.startswith(g + ".")}
        local.update({k: v for k, v in channels.items() if "." in k})
        out.append((g, local))
    return out


def _prepare(f, channels, grid, density, bindings):
    rf = resolve(f, channels, bindings)
    used = {n: channels[n] for n in _names(rf) if n in channels} or channels
    if grid is None:
        grid = make_grid(channels, density)
    return rf, used, check_grid(grid, channels)


def _check_one(f, channels, grid, density, bindings, eps, text, group):
    rf, used, grid = _prepare(f, channels, grid, density, bindings)
    return _evaluate(rf, used, grid, eps, text, group)


def window_table(formula, channels: Mapping[str, Channel], grid: Sequence | None = None, density: int = 10,
                 bindings: Mapping[str, float] | None = None, eps: float = EPS_C) -> tuple[list[Fraction], np.ndarray]:
    """Truth on every grid window at once: ``M[i, j]`` is satisfaction on ``[grid[i], grid[j]]``.

    Entries below the diagonal are False. With per-group names the table is
    the conjunction over groups, matching :func:`check`.
    """
    f = parse_formula(formula) if isinstance(formula, str) else formula
    if grid is None:
        grid = make_grid(channels, density)
    table = None
    for _, local in _group_channels(f, dict(channels), dict(bindings or {})):
        rf, used, g = _prepare(f, local, grid, density, dict(bindings or {}))
        M = _Evaluator(used, g, eps).eval(rf)
        table = M if table is None else table & M
    return g, table


def restrict_channels(channels: Mapping[str, Channel], a, b) -> dict[str, Channel]:
    L = channel_length(channels)
    w = sub_interval(duration(a), duration(b), L)
    return {k: Channel(restrict(c.section, w), c.kind, c.index) for k, c in channels.items()}


def window_grid(grid: Sequence[Fraction], a: Fraction, b: Fraction) -> list[Fraction]:
    return [t - a for t in grid if a <= t <= b]


def recheck_witness(formula, channels, result: SatisfactionResult, bindings=None, eps: float = EPS_C) -> SatisfactionResult:
    """Evaluate on the witness window alone (parent grid points restricted to it)."""
    a, b = result.witness
    if result.group:
        channels = {k[len(result.group) + 1:]: v for k, v in channels.items() if k.startswith(result.group + ".")}
    sub = restrict_channels(channels, a, b)
    return check(formula, sub, grid=window_grid(result.grid, a, b), bindings=bindings, eps=eps)


def verify_restriction_closure(formula, channels: Mapping[str, Channel], grid: Sequence | None = None,
                               density: int = 10, bindings=None, eps: float = EPS_C) -> bool:
    """True when the formula holds on every grid-aligned window (checked one window at a time)."""
    if grid is None:
        grid = make_grid(channels, density)
    grid = check_grid(grid, channels)
    for i, a in enumerate(grid):
        for b in grid[i:]:
            sub = restrict_channels(channels, a, b)
            if not check(formula, sub, grid=window_grid(grid, a, b), bindings=bindings, eps=eps).holds:
                return False
    return True
