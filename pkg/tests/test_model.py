import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import toy, toy_doc
from sensesched import model, presets
from sensesched.model import ComputeModel, SpecError


def _dfs_paths(spec):
    """Independent oracle: node-level source-to-sink paths, cut at streaming heads."""
    succ = {n.id: [] for n in spec.nodes}
    for a, b in spec.edges:
        succ[a].append(b)
    streaming = {n.id for n in spec.nodes if n.streaming}
    preds = {b for _, b in spec.edges}
    starts = [n.id for n in spec.nodes if n.id not in preds or n.id in streaming]
    out = set()
    stack = [(s, (s,)) for s in starts]
    while stack:
        node, path = stack.pop()
        if not succ[node]:
            out.add(path)
        for m in succ[node]:
            if m not in streaming:
                stack.append((m, path + (m,)))
    seqs = set()
    for p in out:
        seq = []
        for n in p:
            s = spec.subchain_of(n)
            if not seq or seq[-1] != s:
                seq.append(s)
        seqs.add(tuple(seq))
    return seqs


# parse ---------------------------------------------------------------------

def test_minimal_document_gets_defaults():
    doc = {"schema": 1, "nodes": [{"id": "a", "compute_model": 3}],
           "subchains": [{"id": "s", "node_ids": ["a"]}],
           "chains": [{"id": "c", "subchain_ids": ["s"]}]}
    spec = model.parse_spec(json.dumps(doc))
    assert spec.cores == 1
    assert spec.constants == model.Constants()
    assert spec.constants.switch_overhead_ms == 0.12
    assert spec.constants.slack_fraction == 0.05
    assert spec.constants.stage1_period_s == 20 and spec.constants.stage2_period_s == 5
    assert spec.constants.estimator_window == 50
    assert [c.id for c in spec.chains] == ["c"]


def test_facetrack_preset_document():
    spec = model.parse_spec(model.render_spec(presets.facetrack()))
    assert [n.id for n in spec.nodes] == ["camera", "detector", "planner"]
    assert spec.node("camera").compute_model == ComputeModel.constant(25.0)
    assert spec.node("detector").compute_model == ComputeModel.uniform(55.0, 60.0)
    assert spec.node("planner").compute_model == ComputeModel.constant(1.0)
    assert spec.edges == (("camera", "detector"), ("detector", "planner"))


def test_unknown_subchain_reference():
    doc = toy_doc({"a": 1})
    doc["chains"] = [{"id": "c", "subchain_ids": ["nope"]}]
    with pytest.raises(SpecError, match="unknown subchain reference"):
        model.spec_from_doc(doc)


def test_syntax_error_reports_position():
    with pytest.raises(SpecError, match=r"line 2 column \d+"):
        model.parse_spec('{"schema": 1,\n  "nodes": [,]}')


def test_duplicate_ids_rejected():
    doc = toy_doc({"a": 1})
    doc["nodes"].append(dict(doc["nodes"][0]))
    with pytest.raises(SpecError, match="duplicate node id"):
        model.spec_from_doc(doc)


def test_unknown_edge_node():
    with pytest.raises(SpecError, match="unknown node reference"):
        model.spec_from_doc(toy_doc({"a": 1}, edges=[("a", "b")]))


def test_missing_schema_rejected():
    doc = toy_doc({"a": 1})
    del doc["schema"]
    with pytest.raises(SpecError, match="schema"):
        model.spec_from_doc(doc)


@pytest.mark.parametrize("name", presets.PRESETS)
def test_render_parse_round_trip(name):
    spec = presets.preset(name)
    again = model.parse_spec(model.render_spec(spec))
    assert again == spec


def test_trace_model_reads_csv(tmp_path):
    (tmp_path / "t.csv").write_text("duration_ms\n3\n4\n5\n")
    doc = toy_doc({"a": 1})
    doc["nodes"][0]["compute_model"] = {"kind": "trace", "path": "t.csv"}
    (tmp_path / "s.json").write_text(json.dumps(doc))
    spec = model.load_spec(tmp_path / "s.json")
    draw = spec.node("a").compute_model.sampler(np.random.default_rng(0))
    assert [draw(0.0) for _ in range(4)] == [3, 4, 5, 3]


# validate ------------------------------------------------------------------

@pytest.mark.parametrize("name", presets.PRESETS)
def test_presets_validate(name):
    assert validate_entries(presets.preset(name)) == []


def validate_entries(spec):
    return list(model.validate(spec).entries)


def test_node_in_two_subchains():
    spec = toy({"a": 1, "b": 1}, edges=[("a", "b")], subchains={"s": ["a", "b"], "t": ["b"]})
    assert any("node in multiple subchains" in e for e in validate_entries(spec))


def test_cycle_detected():
    doc = toy_doc({"a": 1, "b": 1}, edges=[("a", "b"), ("b", "a")])
    doc["chains"] = [{"id": "c", "subchain_ids": ["a", "b"]}]  # skip derivation on a cyclic graph
    spec = model.spec_from_doc(doc)
    assert any("cycle detected" in e for e in validate_entries(spec))


def test_streaming_must_head_subchain():
    spec = toy({"a": 1, "b": 1}, edges=[("a", "b")], streaming=("b",), subchains={"s": ["a", "b"]})
    assert any("streaming node must head" in e for e in validate_entries(spec))


def test_bad_weights_and_bounds():
    spec = toy({"a": 1}, w3={"a": -1.0}, node_throughput_hz={"a": [5, 1]})
    entries = validate_entries(spec)
    assert any("negative weight" in e for e in entries)
    assert any("lower bound exceeds upper bound" in e for e in entries)


def test_bimodal_share_checked():
    cm = ComputeModel.bimodal(1.0, ComputeModel.constant(1), ComputeModel.constant(2))
    assert model.compute_model_problems(cm, "x")


# chains --------------------------------------------------------------------

def test_linear_dag_has_one_chain():
    spec = toy({"a": 1, "b": 1, "c": 1}, edges=[("a", "b"), ("b", "c")])
    chains = model.enumerate_chains(spec)
    assert [c.subchain_ids for c in chains] == [("a", "b", "c")]


def test_diamond_has_two_chains():
    spec = toy({"a": 1, "b": 1, "c": 1, "d": 1}, edges=[("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")])
    assert sorted(c.subchain_ids for c in model.enumerate_chains(spec)) == [("a", "b", "d"), ("a", "c", "d")]


def test_nav_chains():
    spec = presets.nav2d()
    seqs = {c.subchain_ids for c in spec.chains}
    assert ("local",) in seqs
    assert ("gl", "nc", "local") in seqs
    assert spec.chain("local").node_path == ("scan", "lm", "lp")


def test_declared_chain_mismatch():
    doc = toy_doc({"a": 1, "b": 1}, edges=[("a", "b")])
    doc["chains"] = [{"id": "c", "subchain_ids": ["a"]}]
    spec = model.spec_from_doc(doc)
    with pytest.raises(SpecError, match="declared chains differ"):
        model.enumerate_chains(spec)


@st.composite
def random_dags(draw):
    n = draw(st.integers(1, 7))
    ids = [f"n{i}" for i in range(n)]
    edges = [(ids[i], ids[j]) for i in range(n) for j in range(i + 1, n) if draw(st.booleans())]
    streaming = tuple(i for i in ids[1:] if draw(st.integers(0, 4)) == 0)
    return toy({i: 1 for i in ids}, edges=edges, streaming=streaming)


@settings(max_examples=150, deadline=None)
@given(random_dags())
def test_chain_count_matches_dfs_oracle(spec):
    derived = {c.subchain_ids for c in model.enumerate_chains(spec)}
    assert derived == _dfs_paths(spec)


# presets -------------------------------------------------------------------

def test_nav_preset_weights_and_bounds():
    spec = presets.nav2d()
    o = spec.objective
    assert o.node_throughput_hz["gl"][1] == 50.0
    assert o.node_throughput_hz["gp"][1] == 1.0
    assert o.w3s["gl"] == 0.5
    assert o.response_time_weight["local"] == 1.0
    assert spec.node("gl").streaming


def test_yolo_preset_adds_detection_chain():
    spec = presets.nav2d_yolo()
    assert spec.chain("yolo").subchain_ids == ("cam", "yolo")
    assert spec.objective.response_time_weight["yolo"] == 0.0005


def test_vr_timewarp_pinned_to_vsync():
    lo, hi = presets.vr().objective.node_throughput_hz["timewarp"]
    assert lo == hi
    assert 1000.0 / lo == pytest.approx(8.33, abs=0.01)


def test_unknown_preset():
    with pytest.raises(SpecError, match="unknown preset"):
        presets.preset("mars_rover")


# compute models ------------------------------------------------------------

@pytest.mark.parametrize("cm", [
    ComputeModel.constant(2.0),
    ComputeModel.uniform(1.0, 3.0),
    ComputeModel.truncnormal(5.0, 3.0, 0.5, 9.0),
    ComputeModel.bimodal(0.3, ComputeModel.constant(1.0), ComputeModel.uniform(10.0, 20.0)),
    ComputeModel.drift(ComputeModel.constant(1.0), 2.0),
    ComputeModel.spike(ComputeModel.uniform(1.0, 2.0), rate=5.0, cost=10.0),
])
def test_samples_positive(cm):
    draw = cm.sampler(np.random.default_rng(1))
    xs = [draw(t * 0.01) for t in range(2000)]
    assert min(xs) > 0


def test_drift_and_spike_shapes():
    drift = ComputeModel.drift(ComputeModel.constant(10.0), 2.0).sampler(np.random.default_rng(0))
    assert drift(0.0) == 10.0 and drift(3.0) == 16.0
    spike = ComputeModel.spike(ComputeModel.constant(1.0), 0.0, 9.0, times=[1.0]).sampler(np.random.default_rng(0))
    assert [spike(0.5), spike(1.2), spike(1.5)] == [1.0, 10.0, 1.0]


def test_parallel_cost_table_defaults_to_perfect_scaling():
    n = model.NodeSpec("x", ComputeModel.constant(12.0), parallelizable=True)
    assert [n.cost_at(q) for q in (1, 2, 3)] == [12.0, 6.0, 4.0]
    n2 = model.NodeSpec("y", ComputeModel.constant(12.0), parallelizable=True, max_parallel_cost_table={1: 12.0, 2: 8.0})
    assert n2.cost_at(2) == 8.0
    assert model.NodeSpec("z", ComputeModel.constant(12.0)).cost_at(4) == 12.0
