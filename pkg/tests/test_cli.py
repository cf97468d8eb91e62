import csv
import json

import pytest

from sensesched import cli, model, presets, simulator


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def write_spec(tmp_path, spec_or_doc, name="spec.json"):
    p = tmp_path / name
    text = model.render_spec(spec_or_doc) if isinstance(spec_or_doc, model.DagSpec) else json.dumps(spec_or_doc)
    p.write_text(text)
    return str(p)


# solve ---------------------------------------------------------------------

def test_solve_facetrack_periods(capsys, tmp_path):
    code, out, _ = run(capsys, "solve", "--preset", "facetrack")
    assert code == 0 and "period_ms=86 " in out
    code, out, _ = run(capsys, "solve", "--preset", "facetrack", "--cores", "2",
                       "--out", str(tmp_path / "s.json"))
    assert code == 0 and "period_ms=60 " in out
    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc["pipelines"][0]["period_ms"] == 60


def test_solve_csv_output(capsys, tmp_path):
    assert run(capsys, "solve", "--preset", "nav2d", "--out", str(tmp_path / "s.csv"))[0] == 0
    rows = list(csv.DictReader((tmp_path / "s.csv").open()))
    assert {r["subchain"] for r in rows} == {"local", "gl", "gm", "gp", "nc"}
    assert all(float(r["period_ms"]) > 0 for r in rows)


def test_solve_tight_bound_warns(capsys, tmp_path):
    doc = json.loads(model.render_spec(presets.nav2d()))
    doc["objective"]["node_throughput_hz"]["gl"] = [60, 1e9]
    code, out, err = run(capsys, "solve", "--spec", write_spec(tmp_path, doc))
    assert code == 0
    assert "warning: relaxed period upper bound on gl" in err
    assert out.startswith("objective ")


def test_malformed_spec_exit_2(capsys, tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"schema": 1,\n "nodes": [}')
    code, _, err = run(capsys, "solve", "--spec", str(p))
    assert code == 2 and "line 2 column" in err


def test_invalid_spec_exit_2(capsys, tmp_path):
    doc = json.loads(model.render_spec(presets.facetrack()))
    doc["objective"]["w3s"] = {"track": -1}
    code, _, err = run(capsys, "validate", "--spec", write_spec(tmp_path, doc))
    assert code == 2 and "negative weight" in err
    assert run(capsys, "validate", "--preset", "vr")[:2] == (0, "ok\n")


def test_missing_file_and_source(capsys):
    assert run(capsys, "solve", "--spec", "/nonexistent.json")[0] == 2
    assert run(capsys, "solve")[0] == 2


def test_infeasible_exit_3(capsys, tmp_path):
    doc = json.loads(model.render_spec(presets.facetrack()))
    doc["objective"]["chain_latency_ms"] = {"track": [0, 1.0]}
    code, _, err = run(capsys, "solve", "--spec", write_spec(tmp_path, doc))
    assert code == 3 and "infeasible" in err


def test_simulator_breach_exit_4(capsys, monkeypatch, out_dir):
    def boom(*a, **k):
        raise simulator.SimulationError("lineage gap")
    monkeypatch.setattr(simulator, "run", boom)
    code, _, err = run(capsys, "simulate", "--preset", "facetrack", "--duration", "1")
    assert code == 4 and "lineage gap" in err


def test_set_overrides(capsys):
    assert run(capsys, "solve", "--preset", "facetrack", "--set", "nonsense=1")[0] == 2
    assert run(capsys, "solve", "--preset", "facetrack", "--set", "slack_fraction=abc")[0] == 2
    code, out, _ = run(capsys, "solve", "--preset", "facetrack", "--set", "cores=2")
    assert code == 0 and "period_ms=60 " in out


# simulate ------------------------------------------------------------------

def test_simulate_writes_files_to_env_dir(capsys, out_dir):
    code, out, _ = run(capsys, "simulate", "--preset", "facetrack", "--static", "--duration", "30", "--seed", "1")
    assert code == 0 and "track.rt_mean_ms=" in out
    d = out_dir / "out"
    assert {p.name for p in d.iterdir()} == {"trace.csv", "metrics.csv", "metrics.json"}
    rows = dict(csv.reader((d / "metrics.csv").open()))
    assert float(rows["chain.track.rt_mean_ms"]) == pytest.approx(172, rel=0.02)
    doc = json.loads((d / "metrics.json").read_text())
    assert doc["chains"]["track"]["response_time_ms"]["mean"] == pytest.approx(172, rel=0.02)


def test_simulate_is_byte_identical(capsys, tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        assert run(capsys, "simulate", "--preset", "nav2d", "--duration", "6", "--seed", "4", "--out", str(d))[0] == 0
        outs.append({p.name: p.read_bytes() for p in d.iterdir()})
    assert outs[0] == outs[1]


@pytest.mark.slow
def test_yolo_resolve_cadence(capsys, tmp_path):
    d = tmp_path / "yolo"
    assert run(capsys, "simulate", "--preset", "nav2d_yolo", "--duration", "45", "--out", str(d))[0] == 0
    events = list(csv.DictReader((d / "trace.csv").open()))
    at = {k: [int(e["time_us"]) // 1_000_000 for e in events if e["event"] == k]
          for k in ("resolve_stage1", "resolve_stage2")}
    assert at["resolve_stage2"] == list(range(2, 45, 5))
    assert at["resolve_stage1"] == [2, 22, 42]


# sweep ---------------------------------------------------------------------

def test_sweep_row_count_and_header(capsys, tmp_path):
    out = tmp_path / "sweep.csv"
    code, text, _ = run(capsys, "sweep", "--preset", "facetrack", "--axis", "period=50,86,125",
                        "--duration", "6", "--out", str(out))
    assert code == 0 and "at period=86" in text
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["period_ms", "chain", "metric", "value"]
    assert len(rows) - 1 == 3 * 1 * len(cli.SWEEP_METRICS)


def test_single_point_sweep_matches_simulate(capsys, tmp_path):
    spec = presets.facetrack()
    cfg = simulator.SimConfig(duration=6, seed=9)
    rows = cli.sweep(spec, "period", [86.0], cfg)
    sweep_rt = next(v for _, _, k, v in rows if k == "rt_mean_ms")
    run(capsys, "simulate", "--preset", "facetrack", "--static", "--duration", "6", "--seed", "9",
        "--out", str(tmp_path / "sim"))
    doc = json.loads((tmp_path / "sim" / "metrics.json").read_text())
    assert sweep_rt == doc["chains"]["track"]["response_time_ms"]["mean"]


def test_parallel_sweep_matches_serial():
    spec = presets.facetrack()
    cfg = simulator.SimConfig(duration=4, seed=2)
    assert cli.sweep(spec, "period", [60.0, 86.0], cfg, jobs=2) == cli.sweep(spec, "period", [60.0, 86.0], cfg)


def test_sweep_bad_axis(capsys):
    assert run(capsys, "sweep", "--preset", "facetrack", "--axis", "colour=1,2")[0] == 2
    assert run(capsys, "sweep", "--preset", "facetrack", "--axis", "period=")[0] == 2
    assert run(capsys, "sweep", "--preset", "nav2d", "--axis", "period.gl=10")[0] == 2


# compare / preset ----------------------------------------------------------

def test_compare_writes_table(capsys, tmp_path):
    out = tmp_path / "c.csv"
    code, text, _ = run(capsys, "compare", "--preset", "facetrack", "--baselines", "adaptive,equal_share",
                        "--duration", "5", "--out", str(out))
    assert code == 0 and text.startswith("violation.total_s:")
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["metric", "adaptive", "equal_share", "winner"]
    js = tmp_path / "c.json"
    run(capsys, "compare", "--preset", "facetrack", "--baselines", "adaptive,no_steal", "--duration", "4",
        "--out", str(js))
    assert json.loads(js.read_text())["labels"] == ["adaptive", "no_steal"]


def test_compare_rejects_bad_baselines(capsys):
    assert run(capsys, "compare", "--preset", "facetrack", "--baselines", "adaptive,best")[0] == 2
    assert run(capsys, "compare", "--preset", "facetrack", "--baselines", "adaptive")[0] == 2


def test_preset_list_and_export(capsys, tmp_path):
    code, out, _ = run(capsys, "preset")
    assert code == 0 and out.split() == list(presets.PRESETS)
    code, out, _ = run(capsys, "preset", "vr", "--cores", "2")
    spec = model.parse_spec(out)
    assert spec.cores == 2 and spec == presets.vr(cores=2)
