import json
import subprocess
import sys

import pytest

from intsheaf import traceio
from intsheaf.acas import contract_report, load_scenario, run_scenario, wiring_text
from intsheaf.cli import INPUT_ERROR, NUMERIC_ERROR, OK, OUT_ENV, VIOLATION, main
from intsheaf.machines import dump_cds, dump_lts
from intsheaf.acas import AcasParams, aircraft_cds, build_acas_lts, load_aircraft_library


@pytest.fixture(scope="module")
def nominal(tmp_path_factory):
    out = tmp_path_factory.mktemp("nominal")
    code = main(["run", "--scenario", "acas_nominal", "--horizon", "60", "--out", str(out)])
    return code, out


@pytest.fixture(scope="module")
def level(tmp_path_factory):
    out = tmp_path_factory.mktemp("level")
    code = main(["run", "--scenario", "acas_level", "--out", str(out)])
    return code, out


def test_run_nominal(nominal):
    code, out = nominal
    assert code == OK
    assert {p.name for p in out.iterdir()} == {"run.csv", "samples.csv", "report.json"}
    report = json.loads((out / "report.json").read_text())
    assert report["advisories"]["ac1"][1] == ["climb", "38", "42"]
    assert report["advisories"]["ac2"][1] == ["descend", "38", "42"]
    assert all(w["ok"] for w in report["compatibility"])
    assert not report["contracts"]["strict"][0]["holds"]
    assert report["contracts"]["strict"][0]["witness"] == ["421/10", "211/5"]


def test_run_prints_the_advisory(tmp_path, capsys):
    main(["run", "--scenario", "acas_nominal", "--out", str(tmp_path)])
    text = capsys.readouterr().out
    assert "ac1: RA climb at t=38" in text
    assert "12/12 wires agree" in text


def test_check_level_trace(level):
    code, out = level
    assert code == OK
    assert main(["check", "--trace", str(out / "run.csv"), "--formula", "(P = level) => (deriv(theta) = 0)"]) == OK


def test_check_reports_violations_with_a_witness(nominal, capsys):
    _, out = nominal
    code = main(["check", "--trace", str(out / "run.csv"), "--formula", "P = climb => deriv(theta) = rate"])
    assert code == VIOLATION
    assert "witness [" in capsys.readouterr().out


def test_check_reproduces_in_process_verdicts(nominal):
    _, out = nominal
    sc = load_scenario("acas_nominal")
    live = run_scenario(sc).contracts
    trace = traceio.read_trace(out / "run.csv")
    again = contract_report(sc, trace.sections, trace.density)
    for kind in ("strict", "band"):
        assert [(r.holds, r.witness, r.group, r.failing) for r in live[kind]] == [
            (r.holds, r.witness, r.group, r.failing) for r in again[kind]
        ]
    assert main(["check", "--trace", str(out / "run.csv")]) == OK


def test_check_refuses_a_different_density(nominal, capsys):
    _, out = nominal
    assert main(["check", "--trace", str(out / "run.csv"), "--density", "5"]) == INPUT_ERROR
    assert "density" in capsys.readouterr().err


def test_tampered_trace_is_refused(nominal, tmp_path):
    _, out = nominal
    text = (out / "run.csv").read_text().replace('"horizon":"60"', '"horizon":"61"')
    assert '"horizon":"61"' in text
    bad = tmp_path / "run.csv"
    bad.write_text(text)
    assert main(["check", "--trace", str(bad)]) == INPUT_ERROR


def test_runs_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["run", "--scenario", "acas_kinematic", "--out", str(d)]) == OK
    for name in ("run.csv", "samples.csv", "report.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_parallel_runs_match_sequential(tmp_path):
    seq, par = tmp_path / "seq", tmp_path / "par"
    refs = ["--scenario", "acas_level", "--scenario", "acas_kinematic", "--horizon", "20"]
    assert main(["run", *refs, "--out", str(seq)]) == OK
    assert main(["run", *refs, "--out", str(par), "--jobs", "2"]) == OK
    for name in ("acas_level", "acas_kinematic"):
        for f in ("run.csv", "samples.csv", "report.json"):
            assert (seq / name / f).read_bytes() == (par / name / f).read_bytes()


def test_json_format(tmp_path):
    assert main(["run", "--scenario", "acas_level", "--horizon", "10", "--format", "json", "--out", str(tmp_path)]) == OK
    trace = traceio.read_trace(tmp_path / "run.json")
    assert trace.config["horizon"] == "10"
    assert main(["check", "--trace", str(tmp_path / "run.json")]) == OK
    json.loads((tmp_path / "samples.json").read_text())


def test_output_directory_from_the_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    assert main(["run", "--scenario", "acas_level", "--horizon", "5"]) == OK
    assert (tmp_path / "env" / "run.csv").exists()


def test_extra_formulas_affect_the_exit_code(tmp_path):
    base = ["run", "--scenario", "acas_level", "--horizon", "5", "--out", str(tmp_path)]
    assert main(base + ["--formula", "h >= 0"]) == OK
    assert main(base + ["--formula", "h <= 10"]) == VIOLATION
    assert main(base + ["--formula", "h >= limit", "--bind", "limit=0"]) == OK
    assert main(base + ["--formula", "shipped"]) == OK


def test_formula_files(tmp_path):
    f = tmp_path / "f.txt"
    f.write_text("# comment\nh >= 0\n\nP = climb => defl = delta_bar\n")
    assert main(["run", "--scenario", "acas_level", "--horizon", "5", "--out", str(tmp_path), "--formula", str(f)]) == OK
    f.write_text("h >= 0\nh >=\n")
    assert main(["run", "--scenario", "acas_level", "--horizon", "5", "--out", str(tmp_path), "--formula", str(f)]) == INPUT_ERROR


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "--scenario", "acas_nominal", "--horizon", "5/2"],
        ["run", "--scenario", "acas_nominal", "--horizon", "soon"],
        ["run", "--scenario", "no_such_scenario"],
        ["run", "--scenario", "acas_level", "--formula", "P = "],
        ["run", "--scenario", "acas_level", "--bind", "oops"],
        ["run", "--scenario", "acas_level", "--density", "0"],
        ["check", "--trace", "missing.csv"],
        ["compose", "--wiring", "missing.wd"],
        ["validate"],
        ["bogus"],
    ],
)
def test_input_errors(argv, tmp_path, capsys):
    if argv[0] == "run":
        argv = argv + ["--out", str(tmp_path)]
    assert main(argv) == INPUT_ERROR


def test_unreadable_wiring_message(capsys):
    assert main(["compose", "--wiring", "missing.wd"]) == INPUT_ERROR
    assert "missing.wd" in capsys.readouterr().err


def test_unknown_model_is_an_input_error(tmp_path):
    sc = load_scenario("acas_level").to_dict()
    sc["aircraft"][0]["model"] = "unknown"
    path = tmp_path / "s.json"
    path.write_text(json.dumps(sc))
    assert main(["run", "--scenario", str(path), "--out", str(tmp_path)]) == INPUT_ERROR


def test_divergent_airframe_is_a_numeric_error(tmp_path, capsys):
    sc = load_scenario("acas_level").to_dict()
    navion = {k: v for k, v in json.loads(json.dumps(vars(load_aircraft_library()["navion"]))).items() if k != "name"}
    sc["models"] = {"unstable": {**navion, "M_alpha": 400.0, "M_q": 50.0}}
    sc["aircraft"][0]["model"] = "unstable"
    path = tmp_path / "s.json"
    path.write_text(json.dumps(sc))
    assert main(["run", "--scenario", str(path), "--out", str(tmp_path / "o")]) == NUMERIC_ERROR
    assert "error:" in capsys.readouterr().err


def test_inline_models_survive_the_trace_header(tmp_path):
    sc = load_scenario("acas_level").to_dict()
    navion = {k: v for k, v in vars(load_aircraft_library()["navion"]).items() if k != "name"}
    sc["models"] = {"heavy": {**navion, "M_de": 9.0}}
    sc["aircraft"][1]["model"] = "heavy"
    sc["horizon"] = "5"
    path = tmp_path / "s.json"
    path.write_text(json.dumps(sc))
    assert main(["run", "--scenario", str(path), "--out", str(tmp_path / "o")]) == OK
    trace = traceio.read_trace(tmp_path / "o" / "run.csv")
    assert trace.config["models"]["heavy"]["M_de"] == 9.0
    assert main(["check", "--trace", str(tmp_path / "o" / "run.csv")]) == OK


def test_compose_prints_the_structure(tmp_path, capsys):
    wd = tmp_path / "chain.wd"
    wd.write_text(wiring_text("acas_chain.wd"))
    assert main(["compose", "--wiring", str(wd)]) == OK
    out = capsys.readouterr().out
    assert "boxes (3):" in out and "wires (2):" in out
    pair = tmp_path / "pair.wd"
    pair.write_text(wiring_text("acas_pair.wd"))
    assert main(["compose", "--wiring", str(pair), "--scenario", "acas_nominal"]) == OK
    out = capsys.readouterr().out
    assert "samplers: guard1, guard2" in out and "schedule: ac1 -> ac2" in out


def test_compose_reports_the_error_line(tmp_path, capsys):
    wd = tmp_path / "bad.wd"
    wd.write_text("box a : m { in x:K; out y:K }\nexternal in a.x\nwire a.y -> nowhere.x\n")
    assert main(["compose", "--wiring", str(wd)]) == INPUT_ERROR
    assert "line 3" in capsys.readouterr().err


def test_compose_type_checks_against_a_scenario(tmp_path):
    wd = tmp_path / "chain.wd"
    wd.write_text(wiring_text("acas_chain.wd").replace("via g", "via phi"))
    assert main(["compose", "--wiring", str(wd), "--scenario", "acas_nominal"]) == INPUT_ERROR


def test_validate_roundtrips(tmp_path, capsys):
    lts = tmp_path / "acas.lts"
    lts.write_text(dump_lts(build_acas_lts(AcasParams(100.0, 0.01, 1))))
    cds = tmp_path / "navion.cds"
    cds.write_text(dump_cds(aircraft_cds(load_aircraft_library()["navion"], altitude=1000.0)))
    wd = tmp_path / "pair.wd"
    wd.write_text(wiring_text("acas_pair.wd"))
    argv = ["validate", "--lts", str(lts), "--cds", str(cds), "--wiring", str(wd), "--scenario", "acas_nominal"]
    assert main(argv) == OK
    assert capsys.readouterr().out.count("ok ") == 4
    lts.write_text("states: a\n")
    assert main(["validate", "--lts", str(lts)]) == INPUT_ERROR


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "intsheaf", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("run", "check", "compose", "validate"):
        assert cmd in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "intsheaf", "compose", "--wiring", str(tmp_path / "x.wd")],
                          capture_output=True, text=True)
    assert proc.returncode == INPUT_ERROR and "error:" in proc.stderr


# -- trace files ----------------------------------------------------------------------------


def test_trace_roundtrip_is_exact(nominal):
    _, out = nominal
    text = (out / "run.csv").read_text()
    trace = traceio.load_run(text, "run.csv")
    assert traceio.dump_run(trace.sections, trace.config, trace.density) == text
    js = traceio.dump_run_json(trace.sections, trace.config, trace.density)
    back = traceio.load_run_json(js, "run.json")
    assert traceio.dump_run(back.sections, back.config, back.density) == text


def test_trace_header_is_checked(nominal):
    _, out = nominal
    text = (out / "run.csv").read_text()
    with pytest.raises(traceio.TraceError):
        traceio.load_run(text.replace("# intsheaf-trace 1", "# other 1"), "x")
    lines = text.splitlines(keepends=True)
    broken = "".join(lines[:8]) + "garbage\n" + "".join(lines[8:])
    with pytest.raises(traceio.TraceError, match=r"x:\d+"):
        traceio.load_run(broken, "x")


def test_samples_have_canonical_times(nominal):
    _, out = nominal
    rows = (out / "samples.csv").read_text().splitlines()
    assert rows[0].startswith("t,")
    assert rows[1].startswith("0,") and rows[-1].startswith("60,")
    assert len(rows) == 62
