"""Command line: ``run``, ``check``, ``compose`` and ``validate``.

Exit codes: 0 success (every contract holds), 1 contract violation,
2 input error, 3 numeric or causality failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import acas, traceio
from .composition import CausalityError, ComposedMachine, WiringError, external_names, parse_wiring
from .contracts import EPS_C, DerivativeUndefined, FormulaError, GridError, check, parse_formula
from .intervals import duration, format_duration
from .linsys import NumericFailure
from .machines import SpecError, dump_cds, dump_lts, parse_cds, parse_lts

OK, VIOLATION, INPUT_ERROR, NUMERIC_ERROR = 0, 1, 2, 3
OUT_ENV = "INTSHEAF_OUT"


class InputError(Exception):
    pass


def _read(path: str, what: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {what} {path}: {exc.strerror}") from None


def _formulas(items: list[str]) -> list[str]:
    """``--formula`` values: a formula, a file holding one per line (``#`` comments), or ``shipped``."""
    out = []
    for item in items or []:
        if item == "shipped":
            out += acas.shipped_formulas()
        elif os.path.isfile(item):
            for lineno, line in enumerate(_read(item, "formula file").splitlines(), 1):
                line = line.split("#", 1)[0].strip()
                if line:
                    try:
                        parse_formula(line)
                    except FormulaError as exc:
                        raise InputError(f"{item}:{lineno}: {exc}") from None
                    out.append(line)
        else:
            try:
                parse_formula(item)
            except FormulaError as exc:
                raise InputError(f"formula {item!r}: {exc}") from None
            out.append(item)
    return out


def _bindings(items: list[str]) -> dict[str, float]:
    out = {}
    for item in items or []:
        name, sep, value = item.partition("=")
        try:
            if not sep or not name.strip():
                raise ValueError
            out[name.strip()] = float(value)
        except ValueError:
            raise InputError(f"--bind expects NAME=NUMBER, got {item!r}") from None
    return out


def _verdict_lines(label: str, results) -> list[str]:
    return [f"  {label}: {r.describe()}" for r in results]


def _result_json(r) -> dict:
    return {
        "formula": r.formula,
        "holds": r.holds,
        "group": r.group,
        "witness": None if r.witness is None else [format_duration(t) for t in r.witness],
        "failing": r.failing,
        "values": {k: (v if isinstance(v, (str, int, float)) else str(v)) for k, v in r.values.items()},
    }


def _advisories(sc, sections) -> dict[str, list]:
    chans = acas.channels_from_sections(sc, sections)
    return {
        a.name: [[lab, format_duration(t0), format_duration(t1)]
                 for lab, t0, t1 in acas.advisory_segments(chans[f"{a.name}.P"])]
        for a in sc.aircraft
    }


# -- run -------------------------------------------------------------------------


def _run_one(ref: str, horizon, out: str, density: int, formulas: list[str], binds: dict, fmt: str,
             eps: float, grouping: str, subdir: bool) -> tuple[int, str]:
    """Run one scenario and write its files; returns (exit code, report text)."""
    try:
        sc = acas.load_scenario(ref)
    except (acas.ScenarioError, OSError, ValueError, KeyError) as exc:
        return INPUT_ERROR, f"error: scenario {ref}: {exc}"
    if horizon is not None:
        if (horizon / sc.acas.tau).denominator != 1:
            return INPUT_ERROR, (f"error: horizon {format_duration(horizon)} is not a multiple "
                                 f"of the period {format_duration(sc.acas.tau)}")
        sc = sc.with_horizon(horizon)
    try:
        result = acas.run_scenario(sc, grouping=grouping, density=density)
    except (NumericFailure, CausalityError) as exc:
        return NUMERIC_ERROR, f"error: {sc.name}: {exc}"
    sections = result.sections
    bindings = {**acas.contract_bindings(sc), "band": sc.band, **binds}
    chans = acas.channels_from_sections(sc, sections)
    extra = []
    try:
        for f in formulas:
            extra.append(check(f, chans, density=density, bindings=bindings, eps=eps))
    except (FormulaError, GridError) as exc:
        return INPUT_ERROR, f"error: {exc}"
    except DerivativeUndefined as exc:
        return NUMERIC_ERROR, f"error: {exc}"

    target = Path(out) / sc.name if subdir else Path(out)
    target.mkdir(parents=True, exist_ok=True)
    config = sc.to_dict()
    rows = result.samples()
    if fmt == "csv":
        (target / "run.csv").write_text(traceio.dump_run(sections, config, density))
        (target / "samples.csv").write_text(traceio.dump_samples(rows))
    else:
        (target / "run.json").write_text(traceio.dump_run_json(sections, config, density))
        (target / "samples.json").write_text(traceio.dump_samples_json(rows))
    advisories = _advisories(sc, sections)
    report = {
        "scenario": sc.name,
        "config_hash": traceio.config_hash(config, density),
        "density": density,
        "advisories": advisories,
        "compatibility": [
            {"wire": r.name, "ok": r.ok,
             "time": None if r.time is None else format_duration(r.time)} for r in result.compatibility
        ],
        "contracts": {k: [_result_json(r) for r in v] for k, v in result.contracts.items()},
        "formulas": [_result_json(r) for r in extra],
    }
    (target / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")

    lines = [f"{sc.name}: horizon {format_duration(sc.horizon)}, {sc.dynamics} dynamics -> {target}"]
    for name, runs in advisories.items():
        first = next((r for r in runs if r[0] != acas.LEVEL), None)
        ra = f"RA {first[0]} at t={first[1]}" if first else "no RA"
        lines.append(f"  {name}: {ra}; " + ", ".join(f"{lab} [{a}, {b}]" for lab, a, b in runs))
    bad = [r for r in result.compatibility if not r.ok]
    lines.append(f"  compatibility: {len(result.compatibility) - len(bad)}/{len(result.compatibility)} wires agree")
    for r in bad:
        lines.append(f"    mismatch on {r.name} at t={format_duration(r.time)}: {r.expected} vs {r.actual}")
    for kind in ("strict", "band"):
        lines += _verdict_lines(kind, result.contracts.get(kind, []))
    lines += _verdict_lines("formula", extra)
    ok = result.holds() and all(r.holds for r in extra)
    return (OK if ok else VIOLATION), "\n".join(lines)


def cmd_run(args) -> int:
    formulas = _formulas(args.formula)
    binds = _bindings(args.bind)
    horizon = None
    if args.horizon is not None:
        try:
            horizon = duration(args.horizon)
        except (ValueError, ZeroDivisionError) as exc:
            raise InputError(f"bad --horizon {args.horizon!r}: {exc}") from None
    if args.density < 1:
        raise InputError("--density must be at least 1")
    out = args.out or os.environ.get(OUT_ENV) or "traces"
    refs = args.scenario
    job = dict(horizon=horizon, out=out, density=args.density, formulas=formulas, binds=binds,
               fmt=args.format, eps=args.eps, grouping=args.grouping, subdir=len(refs) > 1)
    if args.jobs > 1 and len(refs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(_run_job, [(r, job) for r in refs]))
    else:
        outcomes = [_run_one(r, **job) for r in refs]
    for _, text in outcomes:
        print(text, file=sys.stderr if text.startswith("error:") else sys.stdout)
    return max(code for code, _ in outcomes)


def _run_job(item):
    ref, job = item
    return _run_one(ref, **job)


# -- check -----------------------------------------------------------------------


def cmd_check(args) -> int:
    try:
        trace = traceio.read_trace(args.trace)
    except traceio.TraceError as exc:
        raise InputError(str(exc)) from None
    density = trace.density
    if args.density is not None and args.density != trace.density:
        raise InputError(f"--density {args.density} does not match the trace grid density {trace.density} "
                         f"(config hash {trace.digest[:12]})")
    try:
        sc = acas.scenario_from_dict(trace.config)
        chans = acas.channels_from_sections(sc, trace.sections)
    except (acas.ScenarioError, KeyError, ValueError) as exc:
        raise InputError(f"{args.trace}: header does not describe a scenario run: {exc}") from None
    bindings = {**acas.contract_bindings(sc), "band": sc.band, **_bindings(args.bind)}
    formulas = _formulas(args.formula)
    if formulas:
        results = [check(f, chans, density=density, bindings=bindings, eps=args.eps) for f in formulas]
        for r in results:
            print(r.describe())
        return OK if all(r.holds for r in results) else VIOLATION
    report = acas.contract_report(sc, trace.sections, density)
    for kind in ("strict", "band"):
        for line in _verdict_lines(kind, report.get(kind, [])):
            print(line)
    return OK if all(r.holds for r in report["operational"]) else VIOLATION


# -- compose ---------------------------------------------------------------------


def cmd_compose(args) -> int:
    text = _read(args.wiring, "wiring")
    machines = morphisms = None
    if args.scenario:
        try:
            machines, morphisms = acas.machine_registry(acas.load_scenario(args.scenario))
        except (acas.ScenarioError, OSError, ValueError, KeyError) as exc:
            raise InputError(f"scenario {args.scenario}: {exc}") from None
    try:
        d = parse_wiring(text, machines, morphisms)
    except WiringError as exc:
        raise InputError(f"{args.wiring}: {exc}") from None
    names = external_names(d)
    print(f"boxes ({len(d.boxes)}):")
    for b in d.boxes.values():
        ins = ", ".join(f"{p}:{t}" for p, t in b.inputs.items())
        outs = ", ".join(f"{p}:{t}" for p, t in b.outputs.items())
        print(f"  {b.name} : {b.ref}  in [{ins}]  out [{outs}]")
    print(f"wires ({len(d.wires)}):")
    for w in d.wires:
        via = f" via {w.via}" if w.via else ""
        print(f"  {w.src[0]}.{w.src[1]} -> {w.tgt[0]}.{w.tgt[1]}{via}")
    for direction in ("in", "out"):
        xs = [x for x in d.externals if x.direction == direction]
        print(f"external {direction}puts: " + (", ".join(f"{names[(direction, x.box, x.port)]} = {x.box}.{x.port}"
                                                   for x in xs) or "none"))
    if machines is not None:
        cm = ComposedMachine.from_diagram(d, machines, morphisms, name=Path(args.wiring).stem)
        period = "none" if cm.period is None else format_duration(cm.period)
        print(f"period: {period}")
        print("samplers: " + (", ".join(cm.samplers()) or "none"))
        print("schedule: " + " -> ".join(cm.schedule()))
    return OK


# -- validate --------------------------------------------------------------------


def _roundtrip(kind: str, path: str) -> str:
    text = None if kind == "scenario" else _read(path, kind)
    try:
        if kind == "lts":
            a = parse_lts(text)
            b = parse_lts(dump_lts(a))
            same = a == b
        elif kind == "cds":
            a = parse_cds(text)
            b = parse_cds(dump_cds(a))
            same = dump_cds(a) == dump_cds(b) and a.system == b.system and a.x0 == b.x0
        elif kind == "scenario":
            a = acas.load_scenario(path)
            b = acas.scenario_from_dict(json.loads(json.dumps(a.to_dict())))
            same = a.to_dict() == b.to_dict()
        else:
            a = parse_wiring(text)
            b = parse_wiring(a.to_text())
            same = a.to_text() == b.to_text()
    except (SpecError, WiringError, acas.ScenarioError, ValueError, KeyError) as exc:
        raise InputError(f"{path}: {exc}") from None
    if not same:
        raise InputError(f"{path}: {kind} does not survive a write/read round trip")
    return f"ok {kind} {path}"


def cmd_validate(args) -> int:
    items = [(k, p) for k in ("lts", "cds", "scenario", "wiring") for p in getattr(args, k) or []]
    if not items:
        raise InputError("nothing to validate: give --lts, --cds, --scenario or --wiring")
    for kind, path in items:
        print(_roundtrip(kind, path))
    return OK


# -- entry -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="intsheaf", description="Interval-sheaf hybrid machines: run, check, compose.")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    r = sub.add_parser("run", help="execute scenarios and write traces plus a report")
    r.add_argument("--scenario", action="append", required=True,
                   help="shipped scenario name or JSON path; repeat for several")
    r.add_argument("--horizon", help="override the horizon (a multiple of the period, e.g. 60)")
    r.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./traces)")
    r.add_argument("--density", type=int, default=10, help="grid subdivisions per cell for contracts (default 10)")
    r.add_argument("--formula", action="append", help="extra formula, a file of formulas, or 'shipped' for the packaged suite; repeatable")
    r.add_argument("--bind", action="append", help="NAME=NUMBER constant for formulas; repeatable")
    r.add_argument("--format", choices=("csv", "json"), default="csv", help="trace file format (default csv)")
    r.add_argument("--jobs", type=int, default=1, help="run independent scenario files in N processes")
    r.add_argument("--eps", type=float, default=EPS_C, help=f"comparison tolerance for formulas (default {EPS_C})")
    r.add_argument("--grouping", choices=("flat", "left", "right"), default="flat",
                   help="how each aircraft chain is nested (same behaviour, different chunking)")
    r.set_defaults(fn=cmd_run)

    c = sub.add_parser("check", help="evaluate formulas against a saved trace")
    c.add_argument("--trace", required=True, help="run.csv or run.json written by 'run'")
    c.add_argument("--formula", action="append",
                   help="formula, file of formulas, or 'shipped'; without one the pitch contract report is rebuilt")
    c.add_argument("--density", type=int, help="must equal the density in the trace header")
    c.add_argument("--bind", action="append", help="NAME=NUMBER; rate, delta, delta_bar and band come from the header")
    c.add_argument("--eps", type=float, default=EPS_C, help=f"comparison tolerance (default {EPS_C})")
    c.set_defaults(fn=cmd_check)

    w = sub.add_parser("compose", help="parse a wiring diagram and print the validated structure")
    w.add_argument("--wiring", required=True, help="wiring file (.wd)")
    w.add_argument("--scenario", help="bind box references to the machines of this scenario and type-check")
    w.set_defaults(fn=cmd_compose)

    v = sub.add_parser("validate", help="check that spec files survive a write/read round trip")
    v.add_argument("--lts", action="append", help="LTS text file")
    v.add_argument("--cds", action="append", help="linear system text file")
    v.add_argument("--scenario", action="append", help="scenario JSON file or shipped name")
    v.add_argument("--wiring", action="append", help="wiring file")
    v.set_defaults(fn=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return INPUT_ERROR if exc.code else OK
    try:
        return args.fn(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INPUT_ERROR
    except (FormulaError, GridError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INPUT_ERROR
    except (NumericFailure, CausalityError, DerivativeUndefined) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return NUMERIC_ERROR


if __name__ == "__main__":
    sys.exit(main())
