"""Trace files: cell-level sections (``run.csv``) and sampled columns (``samples.csv``).

``run.csv`` starts with ``#``-prefixed header lines (format tag, config
hash, grid density, scenario, systems) followed by one CSV row per edge or
cell. Times are exact rationals, floats use 17 significant digits, so the
same run always writes the same bytes and reading back reproduces the
sections exactly.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from fractions import Fraction
from pathlib import Path
from typing import Mapping

from .intervals import format_duration
from .linsys import LinearSystem
from .sections import HybridSection, section_from_rows, section_rows

FORMAT = "intsheaf-trace 1"


class TraceError(ValueError):
    pass


def _g17(x: float) -> str:
    return format(float(x) + 0.0, ".17g")


def config_hash(config: Mapping, density: int) -> str:
    blob = json.dumps({"config": config, "density": density}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def system_record(s: LinearSystem) -> dict:
    return {
        "name": s.name,
        "states": list(s.state_names),
        "A": [[_g17(v) for v in row] for row in s.A],
        "B": [[_g17(v) for v in row] for row in s.B],
        "C": [[_g17(v) for v in row] for row in s.C],
    }


def system_from_record(d: Mapping) -> LinearSystem:
    mat = lambda rows: [[float(v) for v in row] for row in rows]
    return LinearSystem(mat(d["A"]), mat(d["B"]), mat(d["C"]), name=d["name"], state_names=d["states"])


def _systems_of(sections: Mapping[str, HybridSection]) -> dict[str, LinearSystem]:
    found = {}
    for s in sections.values():
        for cell in s.cells:
            flow = cell.flow
            while hasattr(flow, "base"):
                flow = flow.base
            system = getattr(flow, "system", None)
            if system is not None:
                if system.name in found and found[system.name] != system:
                    raise TraceError(f"two different systems are both named {system.name!r}")
                found[system.name] = system
    return found


def dump_run(sections: Mapping[str, HybridSection], config: Mapping, density: int) -> str:
    out = io.StringIO()
    out.write(f"# {FORMAT}\n")
    out.write(f"# config_hash: {config_hash(config, density)}\n")
    out.write(f"# density: {density}\n")
    out.write(f"# config: {json.dumps(config, sort_keys=True, separators=(',', ':'))}\n")
    for name, system in sorted(_systems_of(sections).items()):
        out.write(f"# system: {json.dumps(system_record(system), separators=(',', ':'))}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["section", "t_start", "t_end", "kind", "payload"])
    for name in sorted(sections):
        for row in section_rows(sections[name]):
            w.writerow([name, *row])
    return out.getvalue()


class Trace:
    def __init__(self, sections: dict[str, HybridSection], config: dict, density: int, digest: str,
                 systems: dict[str, LinearSystem]):
        self.sections, self.config, self.density, self.digest, self.systems = sections, config, density, digest, systems


def load_run(text: str, source: str = "trace") -> Trace:
    header: dict = {}
    systems: dict[str, LinearSystem] = {}
    body = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition(": ")
            try:
                if key == "system":
                    s = system_from_record(json.loads(value))
                    systems[s.name] = s
                elif key in ("config_hash", "density", "config"):
                    header[key] = value
            except (ValueError, KeyError) as exc:
                raise TraceError(f"{source}:{lineno}: bad header line: {exc}") from None
            if lineno == 1 and line[1:].strip() != FORMAT:
                raise TraceError(f"{source}:1: not a trace file (expected '# {FORMAT}')")
        else:
            body.append((lineno, line))
    if not body:
        raise TraceError(f"{source}: no trace rows")
    for key in ("config_hash", "density", "config"):
        if key not in header:
            raise TraceError(f"{source}: header has no {key!r} line")
    reader = csv.reader([line for _, line in body])
    head = next(reader)
    if head != ["section", "t_start", "t_end", "kind", "payload"]:
        raise TraceError(f"{source}:{body[0][0]}: unexpected column header {head}")
    rows: dict[str, list] = {}
    for (lineno, _), row in zip(body[1:], reader):
        if len(row) != 5:
            raise TraceError(f"{source}:{lineno}: expected 5 columns, got {len(row)}")
        rows.setdefault(row[0], []).append((lineno, row[1:]))
    sections = {}
    for name, items in rows.items():
        try:
            sections[name] = section_from_rows([r for _, r in items], systems)
        except (ValueError, KeyError, TypeError) as exc:
            raise TraceError(f"{source}:{items[0][0]}: section {name!r}: {exc}") from None
    config = json.loads(header["config"])
    density = int(header["density"])
    digest = header["config_hash"]
    if config_hash(config, density) != digest:
        raise TraceError(f"{source}: config hash does not match the header contents")
    return Trace(sections, config, density, digest, systems)


def dump_run_json(sections: Mapping[str, HybridSection], config: Mapping, density: int) -> str:
    """The same content as :func:`dump_run` as one JSON document."""
    doc = {
        "format": FORMAT,
        "config_hash": config_hash(config, density),
        "density": density,
        "config": config,
        "systems": [system_record(s) for _, s in sorted(_systems_of(sections).items())],
        "sections": {name: [list(r) for r in section_rows(sections[name])] for name in sorted(sections)},
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def load_run_json(text: str, source: str = "trace") -> Trace:
    try:
        doc = json.loads(text)
        if doc.get("format") != FORMAT:
            raise TraceError(f"{source}: not a trace file (format {doc.get('format')!r})")
        systems = {s.name: s for s in map(system_from_record, doc["systems"])}
        sections = {}
        for name, rows in doc["sections"].items():
            try:
                sections[name] = section_from_rows(rows, systems)
            except (ValueError, KeyError, TypeError) as exc:
                raise TraceError(f"{source}: section {name!r}: {exc}") from None
        config, density, digest = doc["config"], int(doc["density"]), doc["config_hash"]
    except json.JSONDecodeError as exc:
        raise TraceError(f"{source}: line {exc.lineno}, col {exc.colno}: {exc.msg}") from None
    except (KeyError, TypeError, AttributeError, ValueError) as exc:
        if isinstance(exc, TraceError):
            raise
        raise TraceError(f"{source}: malformed trace document: {exc}") from None
    if config_hash(config, density) != digest:
        raise TraceError(f"{source}: config hash does not match the header contents")
    return Trace(sections, config, density, digest, systems)


def read_trace(path) -> Trace:
    """``run.csv`` or ``run.json``, told apart by the first character."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise TraceError(f"cannot read {path}: {exc.strerror}") from None
    if text.lstrip().startswith("{"):
        return load_run_json(text, str(path))
    return load_run(text, str(path))


def _cell(v) -> str:
    if isinstance(v, Fraction):
        return format_duration(v)
    if isinstance(v, float):
        return "" if math.isnan(v) else _g17(v)
    return str(v)


def dump_samples_json(rows: list[dict]) -> str:
    """Columns as in ``samples.csv``; floats as 17-digit strings so the bytes are fixed."""
    return json.dumps([{k: _cell(v) for k, v in r.items()} for r in rows], indent=1) + "\n"


def dump_samples(rows: list[dict]) -> str:
    if not rows:
        return ""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    cols = list(rows[0])
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(r[c]) for c in cols])
    return out.getvalue()
