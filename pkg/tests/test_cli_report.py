import csv
import json

import pytest

from rdpsim.cli import main
from rdpsim.report import ReportError, build_report, check_trace
from rdpsim.runner import parse_values, rep_seed, run_scenario, sweep
from rdpsim.scenario import ScenarioError, load_scenario, scenario_from_dict, with_value

ALL = ["cr", "migration", "abft", "abft-ecc-only", "abft-x-flips", "rollforward", "sweep"]


@pytest.mark.parametrize("name", ALL)
def test_bundled_scenarios_load(scenario_path, name):
    cfg = load_scenario(scenario_path(name))
    assert cfg.report is not None and cfg.report.verdict in ("complete", "incomplete")


def test_cr_scenario_validates_complete(scenario_path):
    assert load_scenario(scenario_path("cr")).report.verdict == "complete"


def _write(tmp_path, text, name="s.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


BASE = """
horizon = 1000.0
[system]
nodes = [{ id = "n0" }]
processes = [{ id = "p0", node = "n0" }]
[workload]
work = 100.0
"""


def test_negative_rate_error_has_field_path_and_line(tmp_path):
    p = _write(tmp_path, BASE + '[[faults]]\nid = "c"\nmanifestation = "process-crash"\nrate = -1.0\n')
    with pytest.raises(ScenarioError) as exc:
        load_scenario(p)
    e = exc.value
    assert e.path == "faults[0].rate"
    assert "arrival rate must be >= 0" in str(e)
    assert e.line == 11


def test_unknown_pattern_cites_registry(tmp_path):
    p = _write(tmp_path, BASE + '[solution]\nstate = [{ kind = "dynamic" }]\n[[solution.patterns]]\nid = "x"\npattern = "Teleport"\n')
    with pytest.raises(ScenarioError, match="unknown pattern name 'Teleport'; known: .*Rollback"):
        load_scenario(p)


def test_unknown_key_rejected(tmp_path):
    p = _write(tmp_path, BASE + "colour = 3\n")
    with pytest.raises(ScenarioError, match="colour"):
        load_scenario(p)


def test_dangling_reference_rejected(tmp_path):
    p = _write(tmp_path, BASE.replace('node = "n0"', 'node = "n9"'))
    with pytest.raises(ScenarioError, match="dangling node id"):
        load_scenario(p)


def test_invalid_solution_rejected(tmp_path):
    p = _write(tmp_path, BASE + '[solution]\npreset = "cr-process-failure"\nstate = []\n')
    with pytest.raises(ScenarioError, match="state pattern"):
        load_scenario(p)


def test_missing_file():
    with pytest.raises(ScenarioError, match="no such scenario file"):
        load_scenario("/nonexistent.toml")


@pytest.mark.parametrize("name", ["cr", "migration", "abft", "rollforward"])
def test_repeat_runs_are_byte_identical(scenario_path, name):
    cfg = load_scenario(scenario_path(name))
    a, b = run_scenario(cfg), run_scenario(cfg)
    assert a.trace == b.trace
    assert a.metrics.to_dict() == b.metrics.to_dict()


def test_trace_off_keeps_metrics(scenario_path):
    cfg = load_scenario(scenario_path("cr"))
    a, b = run_scenario(cfg), run_scenario(cfg, trace=False)
    assert b.trace == [] and a.metrics.to_dict() == b.metrics.to_dict()


def test_single_point_sweep_equals_repeated_runs(scenario_path):
    cfg = load_scenario(scenario_path("sweep"))
    res = sweep(cfg, "patterns.rb.interval", [300], 3, master_seed=5)
    for row in res.rows:
        m = run_scenario(with_value(cfg, "patterns.rb.interval", 300), rep_seed(5, row["rep"]), trace=False).metrics
        assert row["total"] == m.total and row["seed"] == rep_seed(5, row["rep"])


def test_sweep_over_bogus_parameter(scenario_path):
    cfg = load_scenario(scenario_path("sweep"))
    with pytest.raises(ScenarioError, match="not a sweepable parameter"):
        sweep(cfg, "bogus.param", [1], 1)
    with pytest.raises(ScenarioError, match="no parameter"):
        sweep(cfg, "patterns.rb.colour", [1], 1)


def test_sweep_rejects_invalid_values(scenario_path):
    cfg = load_scenario(scenario_path("sweep"))
    with pytest.raises(ScenarioError):
        sweep(cfg, "patterns.rb.interval", [-5], 1)


def test_parse_values():
    assert parse_values("50:200:50") == [50, 100, 150, 200]
    assert parse_values("0.5,1") == [0.5, 1]
    with pytest.raises(ValueError):
        parse_values("1:2")


def test_workers_do_not_change_results(scenario_path):
    cfg = load_scenario(scenario_path("sweep"))
    one = sweep(cfg, "patterns.rb.interval", [200, 400], 2, master_seed=1)
    two = sweep(cfg, "patterns.rb.interval", [200, 400], 2, master_seed=1, workers=2)
    assert one.rows == two.rows


# cli ----------------------------------------------------------------------------------


def test_cli_validate(scenario_path, capsys):
    assert main(["validate", str(scenario_path("cr"))]) == 0
    assert "complete" in capsys.readouterr().out


def test_cli_config_error_exit_code(tmp_path, capsys):
    p = _write(tmp_path, BASE + "colour = 3\n")
    assert main(["validate", str(p)]) == 1
    assert "colour" in capsys.readouterr().err
    assert main(["frobnicate"]) == 1


def test_cli_run_writes_files_and_is_byte_deterministic(scenario_path, tmp_path):
    for d in ("a", "b"):
        assert main(["run", str(scenario_path("cr")), "--seed", "3", "--out", str(tmp_path / d)]) == 0
    for f in ("metrics.json", "trace.jsonl"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    doc = json.loads((tmp_path / "a" / "metrics.json").read_text())
    assert doc["schema"] == "rdpsim.run/1" and doc["seed"] == 3


def test_cli_run_abort_exit_code(scenario_path, tmp_path):
    assert main(["run", str(scenario_path("abft-ecc-only")), "--out", str(tmp_path)]) == 2


def test_cli_output_dir_from_environment(scenario_path, tmp_path, monkeypatch):
    monkeypatch.setenv("RDPSIM_OUT", str(tmp_path / "env"))
    assert main(["run", str(scenario_path("cr")), "--trace", "off"]) == 0
    assert (tmp_path / "env" / "metrics.json").exists()
    assert not (tmp_path / "env" / "trace.jsonl").exists()


def test_cli_sweep_and_report(scenario_path, tmp_path, capsys):
    out = tmp_path / "sw"
    assert main(["sweep", str(scenario_path("sweep")), "--param", "patterns.rb.interval", "--values", "200,300,400", "--seeds", "2", "--out", str(out)]) == 0
    with open(out / "sweep.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 3 * 2
    assert (out / "plot_total_vs_patterns_rb_interval.csv").exists()
    assert main(["report", str(out)]) == 0
    text = capsys.readouterr().out
    assert "3 points x 2 seeds = 6 rows" in text
    assert build_report(out).sweep_rows == 6


def test_cli_sweep_bad_param_exit_code(scenario_path, tmp_path):
    assert main(["sweep", str(scenario_path("sweep")), "--param", "bogus.param", "--values", "1", "--out", str(tmp_path)]) == 1


# report ---------------------------------------------------------------------------------


def test_report_on_run_outputs(scenario_path, tmp_path):
    main(["run", str(scenario_path("abft")), "--out", str(tmp_path / "abft")])
    main(["run", str(scenario_path("abft-ecc-only")), "--out", str(tmp_path / "ecc")])
    rep = build_report(tmp_path)
    assert rep.runs == 2
    assert "failures 0 (undetected 0)" in rep.text
    assert "accounting identity holds" in rep.text
    assert "VIOLATED" not in rep.text
    assert (tmp_path / "plot_time_breakdown.csv").exists()


def test_report_on_empty_trace(tmp_path):
    (tmp_path / "trace.jsonl").write_text("")
    rep = build_report(tmp_path)
    assert rep.runs == 0 and "0 events" in rep.text


def test_report_rejects_mixed_inputs(scenario_path, tmp_path):
    main(["run", str(scenario_path("cr")), "--trace", "off", "--out", str(tmp_path / "run")])
    main(["sweep", str(scenario_path("sweep")), "--param", "patterns.rb.interval", "--values", "300", "--seeds", "1", "--out", str(tmp_path / "sw")])
    with pytest.raises(ReportError, match="mixed"):
        build_report(tmp_path)


def test_report_rejects_unknown_schema(tmp_path):
    (tmp_path / "metrics.json").write_text(json.dumps({"schema": "other/9"}))
    with pytest.raises(ReportError, match="schema"):
        build_report(tmp_path)


def test_trace_check_catches_broken_links(tmp_path):
    p = tmp_path / "trace.jsonl"
    p.write_text('{"id":1,"t":0,"kind":"heartbeat","cause":null}\n{"id":2,"t":1,"kind":"detection","cause":7}\n')
    with pytest.raises(ReportError, match="does not resolve"):
        check_trace(p)
    p.write_text('{"id":1,"t":0,"kind":"heartbeat","cause":null}\n{"id":1,"t":1,"kind":"heartbeat","cause":null}\n')
    with pytest.raises(ReportError, match="duplicate"):
        check_trace(p)


def test_scenario_dict_round_trip(scenario_path):
    cfg = load_scenario(scenario_path("migration"))
    again = scenario_from_dict(cfg.to_dict())
    assert run_scenario(again).trace == run_scenario(cfg).trace
