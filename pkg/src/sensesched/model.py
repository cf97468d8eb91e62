"""Declarative application model: DAG, subchains, chains, compute models, objective.

A spec document is JSON with a required ``schema: 1`` key. Times are milliseconds,
rates hertz. :func:`parse_spec` and :func:`render_spec` round-trip.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np

SCHEMA_VERSION = 1

COMPUTE_KINDS = ("constant", "uniform", "truncnormal", "bimodal", "drift", "spike", "trace")


class SpecError(ValueError):
    """Raised for malformed or inconsistent spec documents."""


# --------------------------------------------------------------------------
# compute models
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ComputeModel:
    """Per-execution compute time distribution, in milliseconds.

    ``params`` depends on ``kind``:

    constant     value
    uniform      lo, hi
    truncnormal  mu, sigma, lo, hi
    bimodal      p_cheap, cheap (ComputeModel), expensive (ComputeModel)
    drift        base (ComputeModel), slope (ms per simulated second)
    spike        base (ComputeModel), rate (spikes/s), cost (ms), times (optional list of s)
    trace        path (CSV of durations), values (loaded tuple)
    """

    kind: str
    params: dict = field(default_factory=dict)

    @staticmethod
    def constant(value: float) -> "ComputeModel":
        return ComputeModel("constant", {"value": float(value)})

    @staticmethod
    def uniform(lo: float, hi: float) -> "ComputeModel":
        return ComputeModel("uniform", {"lo": float(lo), "hi": float(hi)})

    @staticmethod
    def truncnormal(mu: float, sigma: float, lo: float, hi: float) -> "ComputeModel":
        return ComputeModel("truncnormal", {"mu": float(mu), "sigma": float(sigma),
                                            "lo": float(lo), "hi": float(hi)})

    @staticmethod
    def bimodal(p_cheap: float, cheap: "ComputeModel", expensive: "ComputeModel") -> "ComputeModel":
        return ComputeModel("bimodal", {"p_cheap": float(p_cheap), "cheap": cheap,
                                        "expensive": expensive})

    @staticmethod
    def drift(base: "ComputeModel", slope: float) -> "ComputeModel":
        return ComputeModel("drift", {"base": base, "slope": float(slope)})

    @staticmethod
    def spike(base: "ComputeModel", rate: float, cost: float,
              times: Iterable[float] | None = None) -> "ComputeModel":
        p = {"base": base, "rate": float(rate), "cost": float(cost)}
        if times is not None:
            p["times"] = tuple(float(t) for t in times)
        return ComputeModel("spike", p)

    @staticmethod
    def trace(path: str | Path, values: Iterable[float] | None = None) -> "ComputeModel":
        if values is None:
            values = load_trace(path)
        return ComputeModel("trace", {"path": str(path), "values": tuple(float(v) for v in values)})

    def nominal(self) -> float:
        """Planning value used as c^1 before any measurement.

        Upper end of bounded distributions, share-weighted for bimodal, the
        t=0 value for drift, the base for spikes, and the nearest-rank 95th
        percentile for traces.
        """
        p = self.params
        k = self.kind
        if k == "constant":
            return p["value"]
        if k in ("uniform", "truncnormal"):
            return p["hi"]
        if k == "bimodal":
            return p["p_cheap"] * p["cheap"].nominal() + (1 - p["p_cheap"]) * p["expensive"].nominal()
        if k in ("drift", "spike"):
            return p["base"].nominal()
        if k == "trace":
            vals = sorted(p["values"])
            return vals[max(0, math.ceil(0.95 * len(vals)) - 1)]
        raise SpecError(f"unknown compute kind {k!r}")

    def sampler(self, rng: np.random.Generator) -> Callable[[float], float]:
        """Return ``draw(t_s) -> ms`` bound to ``rng``. Stateful for spike/trace."""
        p = self.params
        k = self.kind
        if k == "constant":
            v = p["value"]
            return lambda t: v
        if k == "uniform":
            lo, hi = p["lo"], p["hi"]
            return lambda t: float(rng.uniform(lo, hi))
        if k == "truncnormal":
            mu, sigma, lo, hi = p["mu"], p["sigma"], p["lo"], p["hi"]

            def draw_tn(t):
                for _ in range(64):
                    x = rng.normal(mu, sigma)
                    if lo <= x <= hi:
                        return float(x)
                return float(min(max(mu, lo), hi))
            return draw_tn
        if k == "bimodal":
            pc = p["p_cheap"]
            cheap = p["cheap"].sampler(rng)
            expensive = p["expensive"].sampler(rng)
            return lambda t: cheap(t) if rng.random() < pc else expensive(t)
        if k == "drift":
            base = p["base"].sampler(rng)
            slope = p["slope"]
            return lambda t: base(t) + slope * t
        if k == "spike":
            base = p["base"].sampler(rng)
            cost = p["cost"]
            if "times" in p:
                pending = list(sorted(p["times"]))
            else:
                pending = None
            state = {"next": None}
            rate = p["rate"]

            def next_random(after):
                return after + float(rng.exponential(1.0 / rate)) if rate > 0 else math.inf

            def draw_spike(t):
                x = base(t)
                if pending is not None:
                    if pending and pending[0] <= t:
                        while pending and pending[0] <= t:
                            pending.pop(0)
                        x += cost
                    return x
                if state["next"] is None:
                    state["next"] = next_random(0.0)
                if state["next"] <= t:
                    x += cost
                    while state["next"] <= t:
                        state["next"] = next_random(state["next"])
                return x
            return draw_spike
        if k == "trace":
            vals = p["values"]
            idx = [0]

            def draw_trace(t):
                v = vals[idx[0] % len(vals)]
                idx[0] += 1
                return v
            return draw_trace
        raise SpecError(f"unknown compute kind {k!r}")

    def to_doc(self) -> dict:
        d: dict[str, Any] = {"kind": self.kind}
        for key, val in self.params.items():
            if key == "values" and self.kind == "trace":
                continue
            d[key] = val.to_doc() if isinstance(val, ComputeModel) else (list(val) if isinstance(val, tuple) else val)
        return d


def load_trace(path: str | Path) -> list[float]:
    """Read durations (ms) from a CSV; uses the ``duration_ms`` column if present."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SpecError(f"empty trace file {path}")
    col = 0
    if rows[0] and not _is_number(rows[0][0]):
        header = [h.strip() for h in rows[0]]
        col = header.index("duration_ms") if "duration_ms" in header else 0
        rows = rows[1:]
    vals = [float(r[col]) for r in rows if r]
    if not vals or min(vals) <= 0:
        raise SpecError(f"trace {path} must hold positive durations")
    return vals


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def compute_model_from_doc(doc: Any, where: str, base_dir: Path | None = None) -> ComputeModel:
    if isinstance(doc, (int, float)):
        return ComputeModel.constant(doc)
    if not isinstance(doc, dict) or "kind" not in doc:
        raise SpecError(f"{where}: compute_model needs a 'kind'")
    kind = doc["kind"]
    try:
        if kind == "constant":
            return ComputeModel.constant(doc["value"])
        if kind == "uniform":
            return ComputeModel.uniform(doc["lo"], doc["hi"])
        if kind == "truncnormal":
            return ComputeModel.truncnormal(doc["mu"], doc["sigma"], doc["lo"], doc["hi"])
        if kind == "bimodal":
            return ComputeModel.bimodal(
                doc["p_cheap"],
                compute_model_from_doc(doc["cheap"], where + ".cheap", base_dir),
                compute_model_from_doc(doc["expensive"], where + ".expensive", base_dir))
        if kind == "drift":
            return ComputeModel.drift(compute_model_from_doc(doc["base"], where + ".base", base_dir),
                                      doc["slope"])
        if kind == "spike":
            return ComputeModel.spike(compute_model_from_doc(doc["base"], where + ".base", base_dir),
                                      doc.get("rate", 0.0), doc["cost"], doc.get("times"))
        if kind == "trace":
            path = Path(doc["path"])
            if not path.is_absolute() and base_dir is not None:
                path = base_dir / path
            return ComputeModel("trace", {"path": doc["path"],
                                          "values": tuple(load_trace(path))})
    except KeyError as exc:
        raise SpecError(f"{where}: compute_model {kind!r} missing field {exc}") from None
    raise SpecError(f"{where}: unknown compute kind {kind!r}")


def compute_model_problems(cm: ComputeModel, where: str) -> list[str]:
    p = cm.params
    out = []
    k = cm.kind
    if k == "constant" and p["value"] <= 0:
        out.append(f"{where}: constant compute time must be positive")
    elif k in ("uniform", "truncnormal"):
        if p["lo"] <= 0 or p["lo"] > p["hi"]:
            out.append(f"{where}: bounds need 0 < lo <= hi")
    elif k == "bimodal":
        if not 0 < p["p_cheap"] < 1:
            out.append(f"{where}: bimodal p_cheap must lie in (0, 1)")
        out += compute_model_problems(p["cheap"], where + ".cheap")
        out += compute_model_problems(p["expensive"], where + ".expensive")
    elif k == "drift":
        out += compute_model_problems(p["base"], where + ".base")
    elif k == "spike":
        if p["cost"] < 0 or p["rate"] < 0:
            out.append(f"{where}: spike rate and cost must be non-negative")
        out += compute_model_problems(p["base"], where + ".base")
    return out


# --------------------------------------------------------------------------
# structural types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NodeSpec:
    id: str
    compute_model: ComputeModel
    parallelizable: bool = False
    max_parallel_cost_table: dict[int, float] | None = None
    streaming: bool = False
    explicitly_scheduled: bool = True
    # firing rate for nodes outside the explicit schedule (IMU, odometry)
    rate_hz: float | None = None

    def cost_at(self, q: int, c1: float | None = None) -> float:
        """Compute time using at most ``q`` cores, scaled from ``c1`` (default nominal)."""
        base = self.compute_model.nominal() if c1 is None else c1
        if q <= 1 or not self.parallelizable:
            return base
        table = self.max_parallel_cost_table
        if table:
            known = [k for k in table if k <= q]
            if not known:
                return base
            best = max(known)
            return base * table[best] / table.get(1, self.compute_model.nominal())
        return base / q


@dataclass(frozen=True)
class SubchainSpec:
    id: str
    node_ids: tuple[str, ...]

    @property
    def head(self) -> str:
        return self.node_ids[0]


@dataclass(frozen=True)
class ChainSpec:
    id: str
    subchain_ids: tuple[str, ...]
    node_path: tuple[str, ...] = ()


@dataclass(frozen=True)
class ObjectiveSpec:
    w1c: dict[str, float] = field(default_factory=dict)
    w2c: dict[str, float] = field(default_factory=dict)
    w3s: dict[str, float] = field(default_factory=dict)
    response_time_weight: dict[str, float] = field(default_factory=dict)
    node_throughput_hz: dict[str, tuple[float, float]] = field(default_factory=dict)
    chain_period_ms: dict[str, tuple[float, float]] = field(default_factory=dict)
    chain_latency_ms: dict[str, tuple[float, float]] = field(default_factory=dict)
    priority: tuple[str, ...] = ()
    soft_scale: float = 1.5
    # subchains allowed to steal; None means every subchain
    stealing: tuple[str, ...] | None = None

    def latency_weight(self, chain_id: str) -> float:
        return self.w1c.get(chain_id, 0.0) + self.response_time_weight.get(chain_id, 0.0)

    def period_weight(self, chain_id: str) -> float:
        return self.w2c.get(chain_id, 0.0) + self.response_time_weight.get(chain_id, 0.0)


@dataclass(frozen=True)
class Constants:
    switch_overhead_ms: float = 0.12
    slack_fraction: float = 0.05
    min_cpu_ms_per_hyperperiod: float = 1.0
    stage1_period_s: float = 20.0
    stage2_period_s: float = 5.0
    estimator_window: int = 50
    estimator_percentile: float = 0.95
    bootstrap_compute_ms: float = 5.0
    bootstrap_solve_delay_s: float = 2.0
    max_reciprocal: int = 8
    big_m: float = 50000.0
    stage1_solve_cost_ms: float = 60.0
    stage2_solve_cost_ms: float = 25.0
    streaming_rate_percentile: float = 0.75


@dataclass(frozen=True)
class DagSpec:
    nodes: tuple[NodeSpec, ...]
    edges: tuple[tuple[str, str], ...]
    subchains: tuple[SubchainSpec, ...]
    chains: tuple[ChainSpec, ...]
    objective: ObjectiveSpec
    cores: int = 1
    constants: Constants = field(default_factory=Constants)
    idle_sink: bool = False
    name: str = ""

    # lookups -----------------------------------------------------------
    def node(self, node_id: str) -> NodeSpec:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def subchain(self, sc_id: str) -> SubchainSpec:
        for s in self.subchains:
            if s.id == sc_id:
                return s
        raise KeyError(sc_id)

    def chain(self, chain_id: str) -> ChainSpec:
        for c in self.chains:
            if c.id == chain_id:
                return c
        raise KeyError(chain_id)

    def subchain_of(self, node_id: str) -> str:
        for s in self.subchains:
            if node_id in s.node_ids:
                return s.id
        raise KeyError(node_id)

    def predecessors(self, node_id: str) -> list[str]:
        return [a for a, b in self.edges if b == node_id]

    def successors(self, node_id: str) -> list[str]:
        return [b for a, b in self.edges if a == node_id]

    def is_scheduled(self, sc_id: str) -> bool:
        return all(self.node(n).explicitly_scheduled for n in self.subchain(sc_id).node_ids)

    def is_streaming(self, sc_id: str) -> bool:
        return self.node(self.subchain(sc_id).head).streaming

    def scheduled_subchains(self) -> list[str]:
        return [s.id for s in self.subchains if self.is_scheduled(s.id)]

    def fixed_period_ms(self, sc_id: str) -> float:
        """Period of a subchain outside the explicit schedule (its head's firing rate)."""
        rate = self.node(self.subchain(sc_id).head).rate_hz
        return 1000.0 / rate if rate else 0.0

    def nominal_costs(self) -> dict[str, float]:
        return {n.id: n.compute_model.nominal() for n in self.nodes}

    def priority_order(self) -> list[str]:
        """Explicitly scheduled subchains, highest priority first.

        Declared order first; the rest by descending total weight touching them.
        """
        sched = self.scheduled_subchains()
        declared = [s for s in self.objective.priority if s in sched]
        rest = [s for s in sched if s not in declared]
        weight = {s: self.objective.w3s.get(s, 0.0) for s in rest}
        for c in self.chains:
            w = self.objective.latency_weight(c.id) + self.objective.period_weight(c.id)
            for s in c.subchain_ids:
                if s in weight:
                    weight[s] += w
        rest.sort(key=lambda s: (-weight[s], sched.index(s)))
        return declared + rest

    def with_constants(self, **kw) -> "DagSpec":
        return replace(self, constants=replace(self.constants, **kw))

    def with_cores(self, k: int) -> "DagSpec":
        return replace(self, cores=int(k))


@dataclass
class ValidationReport:
    entries: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.entries

    def __bool__(self) -> bool:  # truthy when usable
        return self.ok

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)


# --------------------------------------------------------------------------
# parse / render
# --------------------------------------------------------------------------


def _bounds(doc: Any, where: str) -> dict[str, tuple[float, float]]:
    out = {}
    for key, pair in (doc or {}).items():
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise SpecError(f"{where}[{key}]: expected [lower, upper]")
        lo = 0.0 if pair[0] is None else float(pair[0])
        hi = math.inf if pair[1] is None else float(pair[1])
        out[key] = (lo, hi)
    return out


def parse_spec(text: str, base_dir: str | Path | None = None) -> DagSpec:
    """Parse a JSON spec document into a :class:`DagSpec` with defaults applied."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"syntax error at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return spec_from_doc(doc, Path(base_dir) if base_dir else None)


def load_spec(path: str | Path) -> DagSpec:
    path = Path(path)
    return parse_spec(path.read_text(), base_dir=path.parent)


def spec_from_doc(doc: Any, base_dir: Path | None = None) -> DagSpec:
    if not isinstance(doc, dict):
        raise SpecError("spec document must be an object")
    if doc.get("schema") != SCHEMA_VERSION:
        raise SpecError(f"missing or unsupported 'schema' (expected {SCHEMA_VERSION})")
    for key in ("nodes", "subchains"):
        if key not in doc:
            raise SpecError(f"missing top-level key {key!r}")

    nodes = []
    seen: set[str] = set()
    for i, nd in enumerate(doc["nodes"]):
        where = f"nodes[{i}]"
        if "id" not in nd:
            raise SpecError(f"{where}: missing id")
        nid = str(nd["id"])
        if nid in seen:
            raise SpecError(f"duplicate node id {nid!r}")
        seen.add(nid)
        if "compute_model" not in nd:
            raise SpecError(f"{where}: missing compute_model")
        table = nd.get("max_parallel_cost_table")
        nodes.append(NodeSpec(
            id=nid,
            compute_model=compute_model_from_doc(nd["compute_model"], f"{where}.compute_model", base_dir),
            parallelizable=bool(nd.get("parallelizable", False)),
            max_parallel_cost_table={int(k): float(v) for k, v in table.items()} if table else None,
            streaming=bool(nd.get("streaming", False)),
            explicitly_scheduled=bool(nd.get("explicitly_scheduled", True)),
            rate_hz=None if nd.get("rate_hz") is None else float(nd["rate_hz"]),
        ))

    edges = []
    for i, e in enumerate(doc.get("edges", [])):
        if not isinstance(e, (list, tuple)) or len(e) != 2:
            raise SpecError(f"edges[{i}]: expected [from, to]")
        a, b = str(e[0]), str(e[1])
        for x in (a, b):
            if x not in seen:
                raise SpecError(f"edges[{i}]: unknown node reference {x!r}")
        edges.append((a, b))

    subchains = []
    sc_ids: set[str] = set()
    for i, sd in enumerate(doc["subchains"]):
        sid = str(sd.get("id", ""))
        if not sid:
            raise SpecError(f"subchains[{i}]: missing id")
        if sid in sc_ids:
            raise SpecError(f"duplicate subchain id {sid!r}")
        sc_ids.add(sid)
        members = tuple(str(n) for n in sd.get("node_ids", []))
        for n in members:
            if n not in seen:
                raise SpecError(f"subchains[{i}]: unknown node reference {n!r}")
        subchains.append(SubchainSpec(sid, members))

    chains = []
    chain_ids: set[str] = set()
    for i, cd in enumerate(doc.get("chains", [])):
        cid = str(cd.get("id", ""))
        if not cid:
            raise SpecError(f"chains[{i}]: missing id")
        if cid in chain_ids:
            raise SpecError(f"duplicate chain id {cid!r}")
        chain_ids.add(cid)
        scs = tuple(str(s) for s in cd.get("subchain_ids", []))
        for s in scs:
            if s not in sc_ids:
                raise SpecError(f"chains[{i}]: unknown subchain reference {s!r}")
        chains.append(ChainSpec(cid, scs, tuple(str(n) for n in cd.get("node_path", []))))

    od = doc.get("objective", {}) or {}
    objective = ObjectiveSpec(
        w1c={k: float(v) for k, v in od.get("w1c", {}).items()},
        w2c={k: float(v) for k, v in od.get("w2c", {}).items()},
        w3s={k: float(v) for k, v in od.get("w3s", {}).items()},
        response_time_weight={k: float(v) for k, v in od.get("response_time_weight", {}).items()},
        node_throughput_hz=_bounds(od.get("node_throughput_hz"), "objective.node_throughput_hz"),
        chain_period_ms=_bounds(od.get("chain_period_ms"), "objective.chain_period_ms"),
        chain_latency_ms=_bounds(od.get("chain_latency_ms"), "objective.chain_latency_ms"),
        priority=tuple(str(s) for s in od.get("priority", [])),
        soft_scale=float(od.get("soft_scale", 1.5)),
        stealing=None if od.get("stealing") is None else tuple(str(s) for s in od["stealing"]),
    )
    for key in ("w1c", "w2c", "response_time_weight"):
        for cid in getattr(objective, key):
            if chains and cid not in chain_ids:
                raise SpecError(f"objective.{key}: unknown chain reference {cid!r}")
    for sid in objective.w3s:
        if sid not in sc_ids:
            raise SpecError(f"objective.w3s: unknown subchain reference {sid!r}")
    for nid in objective.node_throughput_hz:
        if nid not in seen:
            raise SpecError(f"objective.node_throughput_hz: unknown node reference {nid!r}")

    cdoc = doc.get("constants", {}) or {}
    known = {f.name for f in fields(Constants)}
    for k in cdoc:
        if k not in known:
            raise SpecError(f"constants: unknown constant {k!r}")
    consts = Constants(**{k: (int(v) if k in ("estimator_window", "max_reciprocal") else float(v))
                          for k, v in cdoc.items()})

    spec = DagSpec(
        nodes=tuple(nodes), edges=tuple(edges), subchains=tuple(subchains),
        chains=tuple(chains), objective=objective, cores=int(doc.get("cores", 1)),
        constants=consts, idle_sink=bool(doc.get("idle_sink", False)),
        name=str(doc.get("name", "")),
    )
    if not chains:
        spec = replace(spec, chains=tuple(enumerate_chains(spec)))
    return spec


def spec_to_doc(spec: DagSpec) -> dict:
    o = spec.objective

    def bounds(d):
        return {k: [lo, None if math.isinf(hi) else hi] for k, (lo, hi) in d.items()}

    doc = {
        "schema": SCHEMA_VERSION,
        "name": spec.name,
        "cores": spec.cores,
        "nodes": [],
        "edges": [list(e) for e in spec.edges],
        "subchains": [{"id": s.id, "node_ids": list(s.node_ids)} for s in spec.subchains],
        "chains": [{"id": c.id, "subchain_ids": list(c.subchain_ids), "node_path": list(c.node_path)}
                   for c in spec.chains],
        "objective": {
            "w1c": dict(o.w1c), "w2c": dict(o.w2c), "w3s": dict(o.w3s),
            "response_time_weight": dict(o.response_time_weight),
            "node_throughput_hz": bounds(o.node_throughput_hz),
            "chain_period_ms": bounds(o.chain_period_ms),
            "chain_latency_ms": bounds(o.chain_latency_ms),
            "priority": list(o.priority),
            "soft_scale": o.soft_scale,
            "stealing": None if o.stealing is None else list(o.stealing),
        },
        "constants": {f.name: getattr(spec.constants, f.name) for f in fields(Constants)},
        "idle_sink": spec.idle_sink,
    }
    for n in spec.nodes:
        nd: dict[str, Any] = {"id": n.id, "compute_model": n.compute_model.to_doc(),
                              "parallelizable": n.parallelizable, "streaming": n.streaming,
                              "explicitly_scheduled": n.explicitly_scheduled}
        if n.max_parallel_cost_table:
            nd["max_parallel_cost_table"] = {str(k): v for k, v in n.max_parallel_cost_table.items()}
        if n.rate_hz is not None:
            nd["rate_hz"] = n.rate_hz
        doc["nodes"].append(nd)
    return doc


def render_spec(spec: DagSpec) -> str:
    return json.dumps(spec_to_doc(spec), indent=2)


# --------------------------------------------------------------------------
# validation and chain enumeration
# --------------------------------------------------------------------------


def find_cycle(node_ids: Iterable[str], edges: Iterable[tuple[str, str]]) -> list[str] | None:
    succ: dict[str, list[str]] = {n: [] for n in node_ids}
    for a, b in edges:
        succ.setdefault(a, []).append(b)
        succ.setdefault(b, [])
    color = {n: 0 for n in succ}
    stack_path: list[str] = []

    def visit(n):
        color[n] = 1
        stack_path.append(n)
        for m in succ[n]:
            if color[m] == 1:
                return stack_path[stack_path.index(m):] + [m]
            if color[m] == 0:
                found = visit(m)
                if found:
                    return found
        stack_path.pop()
        color[n] = 2
        return None

    for n in list(succ):
        if color[n] == 0:
            found = visit(n)
            if found:
                return found
    return None


def validate(spec: DagSpec) -> ValidationReport:
    rep = ValidationReport()
    add = rep.entries.append
    node_ids = [n.id for n in spec.nodes]
    if len(set(node_ids)) != len(node_ids):
        add("duplicate node id")
    if spec.cores < 1:
        add("core count must be >= 1")

    cyc = find_cycle(node_ids, spec.edges)
    if cyc:
        add("cycle detected: " + " -> ".join(cyc))

    owner: dict[str, list[str]] = {n: [] for n in node_ids}
    for s in spec.subchains:
        if not s.node_ids:
            add(f"subchain {s.id}: empty node list")
        for n in s.node_ids:
            if n not in owner:
                add(f"subchain {s.id}: unknown node {n}")
            else:
                owner[n].append(s.id)
        edge_set = set(spec.edges)
        for a, b in zip(s.node_ids, s.node_ids[1:]):
            if (a, b) not in edge_set:
                add(f"subchain {s.id}: missing edge {a} -> {b} between consecutive members")
    for n, owners in owner.items():
        if len(owners) > 1:
            add(f"node in multiple subchains: {n} ({', '.join(owners)})")
        elif not owners:
            add(f"node in no subchain: {n}")

    for n in spec.nodes:
        where = f"node {n.id}"
        rep.entries += compute_model_problems(n.compute_model, where)
        if n.max_parallel_cost_table:
            tbl = sorted(n.max_parallel_cost_table.items())
            vals = [v for _, v in tbl]
            if any(v <= 0 for v in vals) or any(b > a + 1e-12 for a, b in zip(vals, vals[1:])):
                add(f"{where}: parallel cost table must be positive and non-increasing in q")
            if 1 in n.max_parallel_cost_table and abs(n.max_parallel_cost_table[1] - n.compute_model.nominal()) > 1e-9:
                add(f"{where}: c^1 must equal the compute model's nominal value")
        if n.streaming and len(owner.get(n.id, [])) == 1:
            if spec.subchain(owner[n.id][0]).head != n.id:
                add(f"{where}: streaming node must head its own subchain")
        if not n.explicitly_scheduled and not n.rate_hz:
            add(f"{where}: nodes outside the explicit schedule need rate_hz")

    for s in spec.subchains:
        flags = {spec.node(n).explicitly_scheduled for n in s.node_ids if n in owner}
        if len(flags) > 1:
            add(f"subchain {s.id}: mixes scheduled and unscheduled nodes")

    o = spec.objective
    for name in ("w1c", "w2c", "w3s", "response_time_weight"):
        for k, w in getattr(o, name).items():
            if w < 0:
                add(f"objective.{name}[{k}]: negative weight")
    for name in ("node_throughput_hz", "chain_period_ms", "chain_latency_ms"):
        for k, (lo, hi) in getattr(o, name).items():
            if lo > hi:
                add(f"objective.{name}[{k}]: lower bound exceeds upper bound")
    sched = spec.scheduled_subchains()
    if o.priority:
        if sorted(set(o.priority)) != sorted(sched) or len(o.priority) != len(set(o.priority)):
            add("objective.priority must be a total order over explicitly scheduled subchains")
    if o.soft_scale <= 1:
        add("objective.soft_scale must exceed 1")

    c = spec.constants
    for f in fields(Constants):
        if getattr(c, f.name) <= 0:
            add(f"constants.{f.name} must be positive")

    if not cyc and rep.ok:
        sc_ids = {s.id for s in spec.subchains}
        for ch in spec.chains:
            if not ch.subchain_ids or any(s not in sc_ids for s in ch.subchain_ids):
                add(f"chain {ch.id}: unknown or empty subchain list")
        try:
            enumerate_chains(spec)
        except SpecError as exc:
            add(str(exc))
    return rep


def _chain_origins(spec: DagSpec) -> list[str]:
    """Nodes that start chains: DAG sources and heads of streaming subchains."""
    has_pred = {b for _, b in spec.edges}
    out = []
    for n in spec.nodes:
        if n.id not in has_pred or n.streaming:
            out.append(n.id)
    return out


def node_paths(spec: DagSpec) -> list[tuple[str, ...]]:
    """All origin-to-sink node paths; a path never enters a streaming node mid-way."""
    succ = {n.id: [] for n in spec.nodes}
    for a, b in spec.edges:
        succ[a].append(b)
    streaming = {n.id for n in spec.nodes if n.streaming}
    paths: list[tuple[str, ...]] = []

    def walk(path):
        nxt = [m for m in succ[path[-1]] if m not in streaming]
        if not succ[path[-1]]:
            paths.append(tuple(path))
            return
        for m in nxt:
            walk(path + [m])

    for o in _chain_origins(spec):
        walk([o])
    return paths


def compress_path(spec: DagSpec, path: Iterable[str]) -> tuple[str, ...]:
    seq: list[str] = []
    for n in path:
        s = spec.subchain_of(n)
        if not seq or seq[-1] != s:
            seq.append(s)
    return tuple(seq)


def enumerate_chains(spec: DagSpec) -> list[ChainSpec]:
    """Derive chains at subchain granularity; check against declared chains if any."""
    derived: dict[tuple[str, ...], tuple[str, ...]] = {}
    for p in node_paths(spec):
        derived.setdefault(compress_path(spec, p), p)
    out = [ChainSpec("-".join(seq), seq, path) for seq, path in derived.items()]
    if spec.chains:
        declared = {c.subchain_ids for c in spec.chains}
        if declared != set(derived):
            missing = sorted("-".join(s) for s in set(derived) - declared)
            extra = sorted("-".join(s) for s in declared - set(derived))
            raise SpecError(f"declared chains differ from derived chains (missing {missing}, extra {extra})")
        out = [ChainSpec(c.id, c.subchain_ids, c.node_path or derived[c.subchain_ids]) for c in spec.chains]
    return out
