"""Two aircraft, each with collision-avoidance logic, a pilot and longitudinal dynamics.

Per aircraft the chain is ``logic -> pilot -> plane``: the logic is an LTS
over the maneuvers {level, climb, descend}, the pilot maps an advisory to an
elevator deflection in {0, +δ̄, -δ̄}, and the plane is a linear model with
that deflection held between samples. A guard per aircraft samples both
altitudes and its own advisory at every multiple of τ and feeds the fired
label back into the logic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np

from .composition import ComposedMachine, Wire, check_compatibility, compose_series, parse_wiring
from .contracts import Channel, SatisfactionResult, check, restrict_channels
from .graphs import loop_graph
from .hybrid import gamma
from .intervals import duration, format_duration
from .machines import (
    CDSMachine,
    LinearCDS,
    LTSMachine,
    LTSSpec,
    Machine,
    MapMachine,
    SheafMorphism,
    SamplerMachine,
    hold_morphism,
    relabel_morphism,
)
from .sections import HybridSection

LEVEL, CLIMB, DESCEND = "level", "climb", "descend"
MANEUVERS = (LEVEL, CLIMB, DESCEND)
LABELS = ("l1", "l2", "l3", "l4", "l5")

PITCH_CONTRACT = (
    "(P = level => deriv(theta) = 0) & (P = descend => deriv(theta) = -rate) & (P = climb => deriv(theta) = rate)"
)


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class AcasParams:
    delta: float  # separation threshold, m
    delta_bar: float  # elevator deflection magnitude, rad
    tau: Fraction  # sampling period, s

    def __post_init__(self):
        object.__setattr__(self, "tau", duration(self.tau))
        if not (self.delta > 0 and self.delta_bar > 0 and self.tau > 0):
            raise ScenarioError("δ, δ̄ and τ must be positive")


def build_acas_lts(p: AcasParams) -> LTSSpec:
    """Level/Climb/Descend with the five guard labels; the output map is the identity."""
    T = {
        ("l1", LEVEL): LEVEL,
        ("l2", LEVEL): DESCEND,
        ("l3", LEVEL): CLIMB,
        ("l3", CLIMB): CLIMB,
        ("l4", CLIMB): LEVEL,
        ("l5", CLIMB): LEVEL,
        ("l2", DESCEND): DESCEND,
        ("l4", DESCEND): LEVEL,
        ("l5", DESCEND): LEVEL,
    }
    return LTSSpec(MANEUVERS, LEVEL, LABELS, MANEUVERS, T, {s: s for s in MANEUVERS}, p.tau)


def guard_label(p: AcasParams, state: str, own_alt: float, other_alt: float, intent: str, first: bool) -> str:
    """The label fired for one aircraft at a sample.

    ``intent`` is the aircraft's own nominal maneuver (the M¹ slot from its
    point of view); ``first`` breaks exact altitude ties.
    """
    sep = abs(own_alt - other_alt)
    if sep >= p.delta:
        return {LEVEL: "l1", CLIMB: "l4", DESCEND: "l5"}[state]
    if intent == CLIMB:
        return "l2"
    if intent == DESCEND:
        return "l3"
    higher = own_alt > other_alt or (own_alt == other_alt and first)
    return "l3" if higher else "l2"


def human_phi(delta_bar: float):
    """Advisory labels to deflections: level 0, climb +δ̄, descend -δ̄."""
    return relabel_morphism("phi", {LEVEL: 0.0, CLIMB: float(delta_bar), DESCEND: -float(delta_bar)}, "K", "Delta")


# -- aircraft --------------------------------------------------------------------


@dataclass(frozen=True)
class AircraftParams:
    """Longitudinal stability derivatives (per-second units), trim and speed."""

    U0: float
    Z_alpha: float
    Z_q: float
    Z_de: float
    M_alpha: float
    M_q: float
    M_de: float
    theta0: float = 0.0
    g: float = 9.81
    u: float | None = None  # cruise speed held constant; defaults to U0
    X_u: float = 0.0
    X_alpha: float = 0.0
    Z_u: float = 0.0
    M_u: float = 0.0
    name: str = "aircraft"

    def __post_init__(self):
        values = [v for v in vars(self).values() if isinstance(v, (int, float)) and not isinstance(v, bool)]
        if not all(math.isfinite(v) for v in values):
            raise ScenarioError("aircraft parameters must be finite")
        if self.U0 <= 0:
            raise ScenarioError("trim speed U0 must be positive")

    @property
    def speed(self) -> float:
        return self.U0 if self.u is None else self.u


STATE_NAMES = ("alpha", "q", "theta", "h")


def aircraft_matrices(p: AircraftParams):
    U0 = p.U0
    A = np.array(
        [
            [p.Z_alpha / U0, (U0 + p.Z_q) / U0, -p.g * math.sin(p.theta0) / U0, 0.0],
            [p.M_alpha, p.M_q, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, p.speed, 0.0],
        ]
    )
    B = np.array([[p.Z_de / U0], [p.M_de], [0.0], [0.0]])
    C = np.array([[0.0, 0.0, 0.0, 1.0]])
    return A, B, C


def aircraft_cds(p: AircraftParams, altitude=0.0, theta=0.0) -> LinearCDS:
    A, B, C = aircraft_matrices(p)
    return LinearCDS.from_matrices(A, B, C, x0=[0.0, 0.0, theta, altitude], name=p.name, state_names=STATE_NAMES)


def steady_pitch_rate(p: AircraftParams, deflection: float) -> float:
    """Steady-state q of the short-period (α, q) subsystem under a held deflection."""
    A, B, _ = aircraft_matrices(p)
    sub = A[:2, :2]
    return float(np.linalg.solve(sub, -B[:2, 0] * deflection)[1])


def kinematic_cds(p: AircraftParams, params: AcasParams, altitude=0.0, theta=0.0, rate: float | None = None) -> LinearCDS:
    """Idealized aircraft: the deflection commands θ' directly (θ' = ±rate at ±δ̄)."""
    rate = abs(steady_pitch_rate(p, params.delta_bar)) if rate is None else rate
    A = [[0.0, 0.0], [p.speed, 0.0]]
    B = [[rate / params.delta_bar], [0.0]]
    C = [[0.0, 1.0]]
    return LinearCDS.from_matrices(A, B, C, x0=[theta, altitude], name=f"{p.name}-kinematic", state_names=("theta", "h"))


def aircraft_machine(cds: LinearCDS, step=Fraction(1, 10), name: str = "plane") -> CDSMachine:
    return CDSMachine(cds, step, name=name, in_port="u", out_port="h")


# -- data files ----------------------------------------------------------------------


def _data_text(name: str) -> str:
    return resources.files("intsheaf").joinpath("data").joinpath(name).read_text()


def load_aircraft_library() -> dict[str, AircraftParams]:
    raw = json.loads(_data_text("aircraft.json"))
    return {k: AircraftParams(**{f: v for f, v in d.items() if f != "note"}, name=k) for k, d in raw.items()}


CHAIN_WIRING = "acas_chain.wd"
LOOP_CHAIN_WIRING = "acas_loop_chain.wd"
PAIR_WIRING = "acas_pair.wd"


def wiring_text(name: str) -> str:
    return _data_text(name)


def shipped_formulas() -> list[str]:
    """The contract suite shipped with the package, one formula per entry."""
    lines = (ln.strip() for ln in _data_text("contracts.txt").splitlines())
    return [ln for ln in lines if ln and not ln.startswith("#")]


# -- scenarios ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AircraftSetup:
    name: str
    altitude: float
    maneuver: str = LEVEL
    theta: float = 0.0
    model: str = "navion"

    def __post_init__(self):
        if self.maneuver not in MANEUVERS:
            raise ScenarioError(f"{self.name}: unknown maneuver {self.maneuver!r}")


@dataclass(frozen=True)
class Scenario:
    name: str
    acas: AcasParams
    aircraft: tuple
    horizon: Fraction
    dynamics: str = "longitudinal"
    settle: Fraction = Fraction(2)
    band: float = 0.1
    step: Fraction = Fraction(1, 10)
    models: Mapping = field(default_factory=dict, compare=False, repr=False)
    rate: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "horizon", duration(self.horizon))
        object.__setattr__(self, "settle", duration(self.settle))
        object.__setattr__(self, "step", duration(self.step))
        object.__setattr__(self, "aircraft", tuple(self.aircraft))
        if len(self.aircraft) != 2:
            raise ScenarioError("a scenario has exactly two aircraft")
        if len({a.name for a in self.aircraft}) != 2:
            raise ScenarioError("aircraft names must differ")
        if (self.horizon / self.acas.tau).denominator != 1:
            raise ScenarioError(
                f"horizon {format_duration(self.horizon)} is not a multiple of τ = {format_duration(self.acas.tau)}"
            )
        if self.dynamics not in ("longitudinal", "kinematic"):
            raise ScenarioError(f"unknown dynamics {self.dynamics!r}")
        for a in self.aircraft:
            if a.model not in self.models:
                raise ScenarioError(f"{a.name}: unknown aircraft model {a.model!r}")

    def with_horizon(self, horizon) -> "Scenario":
        return replace(self, horizon=duration(horizon))

    def pitch_rate(self) -> float:
        if self.rate is not None:
            return self.rate
        return abs(steady_pitch_rate(self.models[self.aircraft[0].model], self.acas.delta_bar))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "acas": {"delta": self.acas.delta, "delta_bar": self.acas.delta_bar, "tau": format_duration(self.acas.tau)},
            "aircraft": [
                {"name": a.name, "altitude": a.altitude, "maneuver": a.maneuver, "theta": a.theta, "model": a.model}
                for a in self.aircraft
            ],
            "horizon": format_duration(self.horizon),
            "dynamics": self.dynamics,
            "settle": format_duration(self.settle),
            "band": self.band,
            "step": format_duration(self.step),
            **({"rate": self.rate} if self.rate is not None else {}),
            **({"models": self._own_models()} if self._own_models() else {}),
        }

    def _own_models(self) -> dict:
        """Parameter sets used here that differ from the shipped library."""
        library = load_aircraft_library()
        out = {}
        for name in sorted({a.model for a in self.aircraft}):
            p = self.models[name]
            if name not in library or _params_dict(library[name]) != _params_dict(p):
                out[name] = _params_dict(p)
        return out


def _params_dict(p: AircraftParams) -> dict:
    return {k: v for k, v in vars(p).items() if k != "name"}


def scenario_from_dict(d: Mapping, models: Mapping[str, AircraftParams] | None = None) -> Scenario:
    """Build a scenario; an optional ``models`` block adds or overrides aircraft parameter sets."""
    models = dict(load_aircraft_library() if models is None else models)
    try:
        for name, raw in (d.get("models") or {}).items():
            models[name] = AircraftParams(**{k: v for k, v in raw.items() if k != "note"}, name=name)
        acas = AcasParams(float(d["acas"]["delta"]), float(d["acas"]["delta_bar"]), str(d["acas"]["tau"]))
        aircraft = tuple(
            AircraftSetup(a["name"], float(a["altitude"]), a.get("maneuver", LEVEL), float(a.get("theta", 0.0)),
                          a.get("model", "navion"))
            for a in d["aircraft"]
        )
        return Scenario(
            d.get("name", "scenario"), acas, aircraft, str(d["horizon"]), d.get("dynamics", "longitudinal"),
            str(d.get("settle", "2")), float(d.get("band", 0.1)), str(d.get("step", "1/10")), models,
            None if d.get("rate") is None else float(d["rate"]),
        )
    except KeyError as exc:
        raise ScenarioError(f"scenario is missing {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"bad scenario value: {exc}") from None


def load_scenario(ref: str) -> Scenario:
    """A scenario file path, or the name of a shipped scenario."""
    path = Path(ref)
    if path.suffix == ".json" or path.exists():
        try:
            text = path.read_text()
        except OSError as exc:
            raise ScenarioError(f"cannot read scenario {ref!r}: {exc.strerror}") from None
    else:
        try:
            text = _data_text(f"{ref}.json")
        except (FileNotFoundError, OSError):
            raise ScenarioError(f"no scenario file or shipped scenario named {ref!r}") from None
    try:
        return scenario_from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{ref}: line {exc.lineno}, col {exc.colno}: {exc.msg}") from None


SHIPPED_SCENARIOS = ("acas_nominal", "acas_level", "acas_kinematic")


# -- the closed loop -------------------------------------------------------------------


def plane_cds(sc: Scenario, setup: AircraftSetup) -> LinearCDS:
    p = replace(sc.models[setup.model], name=setup.name)
    if sc.dynamics == "kinematic":
        return kinematic_cds(p, sc.acas, setup.altitude, setup.theta, sc.pitch_rate())
    return aircraft_cds(p, setup.altitude, setup.theta)


def make_guard(sc: Scenario, own: AircraftSetup, first: bool) -> SamplerMachine:
    p = sc.acas

    def guard(points):
        state = points["adv"][0]
        return {"cmd": guard_label(p, state, points["h_own"][0][0], points["h_other"][0][0], own.maneuver, first)}

    datum = gamma(loop_graph(LABELS), p.tau)
    return SamplerMachine(f"guard_{own.name}", {"adv": "K", "h_own": "C", "h_other": "C"}, {"cmd": "Loop"}, guard,
                          {"cmd": datum}, p.tau)


def chain_parts(sc: Scenario, setup: AircraftSetup):
    spec = build_acas_lts(sc.acas)
    logic = LTSMachine(spec, name="logic", in_port="cmd", out_port="adv")
    pilot = MapMachine(human_phi(sc.acas.delta_bar), name="pilot", in_port="adv", out_port="defl")
    plane = CDSMachine(plane_cds(sc, setup), sc.step, name="plane", in_port="u", out_port="h")
    return logic, pilot, plane


def build_chain(sc: Scenario, setup: AircraftSetup, grouping: str = "flat") -> ComposedMachine:
    """One aircraft's logic -> pilot -> plane chain, exposing ``cmd``, ``adv`` and ``h``.

    ``grouping`` chunks the same diagram differently: ``flat`` (from the
    wiring file), ``left`` = (logic;pilot);plane, ``right`` = logic;(pilot;plane).
    """
    logic, pilot, plane = chain_parts(sc, setup)
    g = hold_morphism()
    if grouping == "flat":
        reg = {"acas_logic": logic, "human": pilot, "aircraft": plane}
        d = parse_wiring(wiring_text(LOOP_CHAIN_WIRING), reg, {"g": g})
        return ComposedMachine.from_diagram(d, reg, {"g": g}, name=setup.name)
    if grouping == "left":
        inner = ComposedMachine(
            {"logic": logic, "pilot": pilot}, [Wire("logic", "adv", "pilot", "adv")],
            {"cmd": ("logic", "cmd")}, {"adv": ("logic", "adv"), "defl": ("pilot", "defl")}, name="logic_pilot",
        )
        return ComposedMachine(
            {"logic_pilot": inner, "plane": plane}, [Wire("logic_pilot", "defl", "plane", "u", g)],
            {"cmd": ("logic_pilot", "cmd")}, {"adv": ("logic_pilot", "adv"), "h": ("plane", "h")}, name=setup.name,
        )
    if grouping == "right":
        inner = compose_series(pilot, g, plane, name="pilot_plane")
        return ComposedMachine(
            {"logic": logic, "pilot_plane": inner}, [Wire("logic", "adv", "pilot_plane", "adv")],
            {"cmd": ("logic", "cmd")}, {"adv": ("logic", "adv"), "h": ("pilot_plane", "h")}, name=setup.name,
        )
    raise ValueError(f"unknown grouping {grouping!r}")


def build_pair(sc: Scenario, grouping: str = "flat") -> ComposedMachine:
    a1, a2 = sc.aircraft
    reg = {
        "chain1": build_chain(sc, a1, grouping),
        "chain2": build_chain(sc, a2, grouping),
        "guard1": make_guard(sc, a1, True),
        "guard2": make_guard(sc, a2, False),
    }
    d = parse_wiring(wiring_text(PAIR_WIRING), reg)
    return ComposedMachine.from_diagram(d, reg, name=sc.name)


def machine_registry(sc: Scenario) -> tuple[dict[str, Machine], dict[str, SheafMorphism]]:
    """Every machine and morphism the shipped wiring files refer to, built for ``sc``."""
    a1, a2 = sc.aircraft
    logic, pilot, plane = chain_parts(sc, a1)
    machines = {
        "acas_logic": logic, "human": pilot, "aircraft": plane,
        "chain1": build_chain(sc, a1), "chain2": build_chain(sc, a2),
        "guard1": make_guard(sc, a1, True), "guard2": make_guard(sc, a2, False),
    }
    return machines, {"g": hold_morphism(), "phi": human_phi(sc.acas.delta_bar)}


# -- results --------------------------------------------------------------------------------


@dataclass
class ScenarioResult:
    scenario: Scenario
    machine: ComposedMachine
    state: dict
    compatibility: list
    contracts: dict = field(default_factory=dict)

    @property
    def sections(self) -> dict[str, HybridSection]:
        """Every leaf section keyed by ``box/.../port`` path."""
        from .machines import flatten_state

        out = {}
        for key, st in self.machine.component_states(self.state).items():
            out.update(flatten_state(st, key) if not isinstance(st, HybridSection) else {key: st})
        return out

    @property
    def compatible(self) -> bool:
        return all(r.ok for r in self.compatibility)

    def samples(self) -> list[dict]:
        return sample_rows(self.scenario, self.sections)

    def holds(self) -> bool:
        return self.compatible and all(r.holds for r in self.contracts.get("operational", []))


def aircraft_boxes(sc: Scenario) -> dict[str, str]:
    return {sc.aircraft[0].name: "ac1", sc.aircraft[1].name: "ac2"}


def _find(sections: Mapping[str, HybridSection], box: str, leaf: str) -> HybridSection:
    for key, s in sections.items():
        parts = key.split("/")
        if parts[0] == box and parts[-1] == leaf:
            return s
    raise KeyError(f"no section for {box}/{leaf}")


def channels_from_sections(sc: Scenario, sections: Mapping[str, HybridSection]) -> dict[str, Channel]:
    """``<aircraft>.P`` (advisory label), ``.defl`` and one channel per plane state."""
    chans = {}
    for name, box in aircraft_boxes(sc).items():
        plane = _find(sections, box, "plane")
        pilot = _find(sections, box, "pilot")
        chans[f"{name}.P"] = Channel.label(pilot)
        chans[f"{name}.defl"] = Channel.vector(plane, 0)
        cell = plane.cells[0] if plane.cells else None
        names = cell.flow.system.state_names if cell is not None else STATE_NAMES
        for i, n in enumerate(names):
            chans[f"{name}.{n}"] = Channel.state(plane, i)
    return chans


def sample_rows(sc: Scenario, sections: Mapping[str, HybridSection]) -> list[dict]:
    """Right-limit values at every ``κτ`` (``N + 1`` rows)."""
    chans = channels_from_sections(sc, sections)
    tau = sc.acas.tau
    rows = []
    for k in range(int(sc.horizon / tau) + 1):
        t = k * tau
        row = {"t": t}
        for a in sc.aircraft:
            row[f"{a.name}.label"] = chans[f"{a.name}.P"].value(t, "right")
            for n in STATE_NAMES:
                key = f"{a.name}.{n}"
                row[key] = chans[key].value(t, "right") if key in chans else math.nan
            row[f"{a.name}.deflection"] = chans[f"{a.name}.defl"].value(t, "right")
        rows.append(row)
    return rows


def contract_bindings(sc: Scenario) -> dict[str, float]:
    return {"rate": sc.pitch_rate(), "delta": sc.acas.delta, "delta_bar": sc.acas.delta_bar}


def advisory_segments(chan: Channel) -> list[tuple[str, Fraction, Fraction]]:
    """Maximal ``(label, t_on, t_off)`` runs of one advisory."""
    s = chan.section
    runs = []
    for i, cell in enumerate(s.cells):
        lab, a, b = cell.flow.label, s.edges[i].time, s.edges[i + 1].time
        if runs and runs[-1][0] == lab and runs[-1][2] == a:
            runs[-1] = (lab, runs[-1][1], b)
        else:
            runs.append((lab, a, b))
    return runs


BAND_FORMULAS = {
    CLIMB: "deriv(theta) >= (1 - band) * rate & deriv(theta) <= (1 + band) * rate",
    DESCEND: "deriv(theta) <= -(1 - band) * rate & deriv(theta) >= -(1 + band) * rate",
    LEVEL: "deriv(theta) <= band * rate & deriv(theta) >= -band * rate",
}


def band_check(sc: Scenario, chans: Mapping[str, Channel], density: int = 10) -> list[SatisfactionResult]:
    """The settled reading: on each advisory run, after ``settle``, θ' sits in a band around its target."""
    binds = {**contract_bindings(sc), "band": sc.band}
    results = []
    for a in sc.aircraft:
        local = {"theta": chans[f"{a.name}.theta"], "P": chans[f"{a.name}.P"]}
        for lab, t_on, t_off in advisory_segments(local["P"]):
            start = t_on + sc.settle
            if start >= t_off:
                continue
            sub = restrict_channels(local, start, t_off)
            r = check(BAND_FORMULAS[lab], {"theta": sub["theta"]}, density=density, bindings=binds)
            r.group = f"{a.name} {lab} [{format_duration(start)}, {format_duration(t_off)}]"
            results.append(r)
    return results


def contract_report(sc: Scenario, sections: Mapping[str, HybridSection], density: int = 10) -> dict:
    chans = channels_from_sections(sc, sections)
    strict = check(PITCH_CONTRACT, chans, density=density, bindings=contract_bindings(sc))
    strict.group = strict.group or "all"
    report = {"strict": [strict]}
    if sc.dynamics == "kinematic":
        report["operational"] = [strict]
    else:
        report["band"] = band_check(sc, chans, density)
        report["operational"] = report["band"]
    return report


def run_scenario(sc: Scenario, grouping: str = "flat", density: int = 10, contracts: bool = True) -> ScenarioResult:
    cm = build_pair(sc, grouping)
    state = cm.execute({}, horizon=sc.horizon)
    result = ScenarioResult(sc, cm, state, check_compatibility(cm, state))
    if contracts:
        result.contracts = contract_report(sc, result.sections, density)
    return result
