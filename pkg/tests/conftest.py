import os

import pytest

from sensesched import model


def toy_doc(costs, cores=1, streaming=(), w3=None, edges=(), subchains=None, **objective):
    """Constant-cost spec document; one subchain per node unless ``subchains`` is given."""
    nodes = [{"id": n, "compute_model": {"kind": "constant", "value": c}, "streaming": n in streaming}
             for n, c in costs.items()]
    subchains = subchains or {n: [n] for n in costs}
    return {
        "schema": 1, "name": "toy", "cores": cores, "nodes": nodes, "edges": [list(e) for e in edges],
        "subchains": [{"id": s, "node_ids": list(m)} for s, m in subchains.items()],
        "objective": {"w3s": w3 if w3 is not None else {s: 1.0 for s in subchains}, **objective},
        "constants": {"slack_fraction": 0.0, "switch_overhead_ms": 0.0},
    }


def toy(costs, **kw):
    return model.spec_from_doc(toy_doc(costs, **kw))


@pytest.fixture
def make_toy():
    return toy


@pytest.fixture
def out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("SENSESCHED_OUT_DIR", str(tmp_path / "out"))
    return tmp_path


def pytest_report_header(config):
    from sensesched import _kernels
    return f"sensesched kernels: {_kernels.BACKEND} (SENSESCHED_NO_JIT={os.environ.get('SENSESCHED_NO_JIT', '')})"


ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion():
    """Call with (number, passed, detail); records one PASS/FAIL line for the summary."""
    def record(num, ok, detail):
        line = f"criterion {num}: {'PASS' if ok else 'FAIL'} {detail}"
        ACCEPTANCE.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
