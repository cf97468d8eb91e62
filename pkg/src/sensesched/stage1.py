"""Stage I: subchain-to-core allocation.

The allocation problem is a MILP over boolean a[i, j]. Under the "alone on one
or more cores, or sharing exactly one core" restriction the feasible set is a
set of partitions of the subchains with core multiplicities, so the optimum is
found by evaluating every distinct (partition, core count) shape exactly.
:func:`check_allocation` evaluates any matrix constraint by constraint, so a
solution can be audited without trusting the search.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from . import _kernels
from .analytics import ChainMetrics, MetricWeights, hz_to_period_bounds
from .model import DagSpec

log = logging.getLogger(__name__)

MAX_CONFIGURATIONS = 10 ** 7
MAX_RELAXATION = 8.0


class InstanceTooLarge(ValueError):
    pass


class Unsatisfiable(RuntimeError):
    """No allocation meets the bounds even after the relaxation cap."""


@dataclass
class Stage1Problem:
    subchains: list[str]
    costs: list[float]  # c(S_i): sum of member node estimates
    max_costs: list[float]  # max member node estimate
    parallelizable: list[bool]
    cores: int
    chains: list[tuple[str, tuple[str, ...]]] = field(default_factory=list)
    weights: MetricWeights = field(default_factory=MetricWeights)
    # subchains outside the explicit schedule: id -> (period, execution time)
    fixed: dict[str, tuple[float, float]] = field(default_factory=dict)
    period_bounds: dict[str, tuple[float, float]] = field(default_factory=dict)
    chain_period_bounds: dict[str, tuple[float, float]] = field(default_factory=dict)
    chain_latency_bounds: dict[str, tuple[float, float]] = field(default_factory=dict)
    # observed output period for streaming subchains, used when they source a chain
    source_period_override: dict[str, float] = field(default_factory=dict)
    soft_scale: float = 1.5
    big_m: float = 50000.0

    def __post_init__(self):
        if self.cores < 1:
            raise ValueError("need at least one core")
        if any(c <= 0 for c in self.costs):
            raise ValueError("compute estimates must be positive")

    @property
    def n(self) -> int:
        return len(self.subchains)

    @classmethod
    def from_spec(cls, spec: DagSpec, estimates: Mapping[str, float] | None = None,
                  observed_periods: Mapping[str, float] | None = None) -> "Stage1Problem":
        est = dict(spec.nominal_costs())
        if estimates:
            est.update(estimates)
        sched = spec.scheduled_subchains()
        costs, maxc, par = [], [], []
        for s in sched:
            members = spec.subchain(s).node_ids
            costs.append(sum(est[n] for n in members))
            maxc.append(max(est[n] for n in members))
            par.append(all(spec.node(n).parallelizable for n in members))
        fixed = {s.id: (spec.fixed_period_ms(s.id), 0.0) for s in spec.subchains if s.id not in sched}
        o = spec.objective
        bounds: dict[str, tuple[float, float]] = {}
        for s in sched:
            lo, hi = 0.0, math.inf
            for n in spec.subchain(s).node_ids:
                if n in o.node_throughput_hz:
                    plo, phi = hz_to_period_bounds(*o.node_throughput_hz[n])
                    lo, hi = max(lo, plo), min(hi, phi)
            if lo > 0 or not math.isinf(hi):
                bounds[s] = (lo, hi)
        chain_ids = [c.id for c in spec.chains]
        override = {}
        for s, p in (observed_periods or {}).items():
            if s in sched and spec.is_streaming(s):
                override[s] = p
        return cls(
            subchains=sched, costs=costs, max_costs=maxc, parallelizable=par, cores=spec.cores,
            chains=[(c.id, c.subchain_ids) for c in spec.chains],
            weights=MetricWeights.from_objective(o, chain_ids), fixed=fixed,
            period_bounds=bounds, chain_period_bounds=dict(o.chain_period_ms),
            chain_latency_bounds=dict(o.chain_latency_ms), source_period_override=override,
            soft_scale=o.soft_scale, big_m=spec.constants.big_m,
        )


@dataclass
class Allocation:
    matrix: np.ndarray  # (N, K) bool
    subchains: list[str]
    multi_core: list[bool]
    pipeline_width: list[int]
    parallelism: list[float]
    periods: list[float]
    execution_times: list[float]
    chain_metrics: dict[str, ChainMetrics]
    objective_value: float
    big_m: float = 50000.0
    warnings: list[str] = field(default_factory=list)

    def cores_of(self, sc: str) -> list[int]:
        i = self.subchains.index(sc)
        return [int(j) for j in np.flatnonzero(self.matrix[i])]

    def shared_cores(self) -> list[int]:
        return [j for j in range(self.matrix.shape[1]) if self.matrix[:, j].sum() >= 2]

    def period_of(self, sc: str) -> float:
        return self.periods[self.subchains.index(sc)]


@dataclass
class CheckReport:
    violations: list[tuple[str, str]]  # (constraint tag, message)
    allocation: Allocation | None
    bound_violations: list[tuple[str, str, str]] = field(default_factory=list)  # (kind, key, side)

    @property
    def feasible(self) -> bool:
        return not self.violations


# --------------------------------------------------------------------------
# per-shape period model
# --------------------------------------------------------------------------


def _divisors(m: int) -> list[int]:
    return [d for d in range(1, m + 1) if m % d == 0]


def multi_core_period(total: float, maxc: float, m: int, parallelizable: bool) -> tuple[float, int]:
    """Tight period and pipeline width for a subchain alone on ``m`` cores.

    Per-core z encoding: p*m >= maxc*b and p*m >= total, with b = m when the
    subchain cannot parallelise. Ties go to the wider pipeline (smaller q).
    """
    widths = _divisors(m) if parallelizable else [m]
    best = None
    for b in sorted(widths, reverse=True):
        p = max(maxc * b, total) / m
        if best is None or p < best[0] - 1e-12:
            best = (p, b)
    return best


def _timing(problem: Stage1Problem, i: int, groupsize: int, ncores: int) -> tuple[float, float, int]:
    """(period, execution time, pipeline width) of subchain i given its shape."""
    c = problem.costs[i]
    lo = problem.period_bounds.get(problem.subchains[i], (0.0, math.inf))[0]
    if ncores >= 2:
        p, b = multi_core_period(c, problem.max_costs[i], ncores, problem.parallelizable[i])
        p = max(p, lo)
        return p, c, b
    p = max(c * groupsize, lo)
    return p, max(p, c), 1


# --------------------------------------------------------------------------
# constraint checker
# --------------------------------------------------------------------------


def _index_arrays(problem: Stage1Problem):
    names = list(problem.subchains) + list(problem.fixed)
    pos = {s: i for i, s in enumerate(names)}
    L = max((len(seq) for _, seq in problem.chains), default=1)
    chains = -np.ones((len(problem.chains), max(L, 1)), dtype=np.int64)
    for c, (_, seq) in enumerate(problem.chains):
        chains[c, :len(seq)] = [pos[s] for s in seq]
    w1 = np.array([problem.weights.w1c.get(cid, 0.0) for cid, _ in problem.chains])
    w2 = np.array([problem.weights.w2c.get(cid, 0.0) for cid, _ in problem.chains])
    w3 = np.array([problem.weights.w3s.get(s, 0.0) for s in names])
    return names, chains, w1, w2, w3


def _chain_values(problem: Stage1Problem, P: np.ndarray, E: np.ndarray):
    """Objective, latency, period per row with chain-level lower bounds applied."""
    names, chains, w1, w2, w3 = _index_arrays(problem)
    nf = len(problem.fixed)
    if nf:
        fp = np.array([problem.fixed[s][0] for s in problem.fixed])
        fe = np.array([problem.fixed[s][1] for s in problem.fixed])
        P = np.hstack([P, np.broadcast_to(fp, (P.shape[0], nf))])
        E = np.hstack([E, np.broadcast_to(fe, (E.shape[0], nf))])
    _, lat, per = _kernels.chain_eval(P, E, chains, np.zeros_like(w1), np.zeros_like(w2),
                                      np.zeros(P.shape[1]))
    for c, (cid, seq) in enumerate(problem.chains):
        first = seq[0]
        # the observed rate of a streaming source enters chain period terms only
        if first in problem.source_period_override:
            rest = [names.index(s) for s in seq[1:]]
            obs = problem.source_period_override[first]
            per[:, c] = np.maximum(obs, P[:, rest].max(axis=1)) if rest else obs
        lo_t = problem.chain_period_bounds.get(cid, (0.0, math.inf))[0]
        lo_l = problem.chain_latency_bounds.get(cid, (0.0, math.inf))[0]
        per[:, c] = np.maximum(per[:, c], lo_t)
        lat[:, c] = np.maximum(lat[:, c], lo_l)
    obj = lat @ w1 + per @ w2 + P @ w3
    return obj, lat, per


def _bound_violations(problem: Stage1Problem, p: Sequence[float], lat: Sequence[float],
                      per: Sequence[float], tol: float = 1e-9) -> list[tuple[str, str, str]]:
    out = []
    for i, s in enumerate(problem.subchains):
        hi = problem.period_bounds.get(s, (0.0, math.inf))[1]
        if p[i] > hi * (1 + tol):
            out.append(("period", s, "hi"))
    for c, (cid, _) in enumerate(problem.chains):
        if per[c] > problem.chain_period_bounds.get(cid, (0.0, math.inf))[1] * (1 + tol):
            out.append(("chain_period", cid, "hi"))
        if lat[c] > problem.chain_latency_bounds.get(cid, (0.0, math.inf))[1] * (1 + tol):
            out.append(("chain_latency", cid, "hi"))
    return out


_BOUND_TAG = {"period": "period_bound", "chain_period": "chain_period_bound",
              "chain_latency": "chain_latency_bound"}


def check_allocation(problem: Stage1Problem, alloc) -> CheckReport:
    """Check an allocation matrix against every constraint; return tight values when feasible."""
    a = np.asarray(alloc.matrix if isinstance(alloc, Allocation) else alloc).astype(bool)
    if a.shape != (problem.n, problem.cores):
        raise ValueError(f"matrix shape {a.shape} != ({problem.n}, {problem.cores})")
    viol: list[tuple[str, str]] = []
    row = a.sum(axis=1)
    col = a.sum(axis=0)
    for i, s in enumerate(problem.subchains):
        if row[i] < 1:
            viol.append(("coverage", f"subchain {s} has no core"))
    for j in range(problem.cores):
        if col[j] < 1:
            viol.append(("empty_core", f"core {j} hosts no subchain"))
    for i, s in enumerate(problem.subchains):
        if row[i] >= 2:
            for j in np.flatnonzero(a[i]):
                if col[j] > 1:
                    viol.append(("shared_exclusive_mix", f"subchain {s} spans several cores but shares core {j}"))
    if viol:
        return CheckReport(viol, None)

    P = np.zeros(problem.n)
    E = np.zeros(problem.n)
    widths = []
    for i in range(problem.n):
        m = int(row[i])
        s_count = int(col[np.flatnonzero(a[i])[0]]) if m == 1 else 1
        P[i], E[i], b = _timing(problem, i, s_count, m)
        widths.append(b)
    obj, lat, per = _chain_values(problem, P[None, :], E[None, :])
    bviol = _bound_violations(problem, P, lat[0], per[0])
    for kind, key, side in bviol:
        viol.append((_BOUND_TAG[kind], f"{kind} bound on {key} ({side}) violated"))
    metrics = {cid: ChainMetrics(float(lat[0, c]), float(per[0, c]))
               for c, (cid, _) in enumerate(problem.chains)}
    allocation = Allocation(
        matrix=a, subchains=list(problem.subchains), multi_core=[bool(r >= 2) for r in row],
        pipeline_width=widths, parallelism=[float(r) / b for r, b in zip(row, widths)],
        periods=[float(x) for x in P], execution_times=[float(x) for x in E],
        chain_metrics=metrics, objective_value=float(obj[0]), big_m=problem.big_m,
    )
    return CheckReport(viol, allocation, bviol)


# --------------------------------------------------------------------------
# enumeration of the restricted feasible set
# --------------------------------------------------------------------------


def _set_partitions(n: int) -> Iterator[list[list[int]]]:
    """Restricted-growth-string order."""
    if n == 0:
        yield []
        return
    rgs = [0] * n

    def rec(i, maxv):
        if i == n:
            groups: list[list[int]] = [[] for _ in range(maxv + 1)]
            for k, g in enumerate(rgs):
                groups[g].append(k)
            yield groups
            return
        for v in range(maxv + 2):
            rgs[i] = v
            yield from rec(i + 1, max(maxv, v))

    rgs[0] = 0
    yield from rec(1, 0)


def _assoc_stirling(n: int, k: int, memo={}) -> int:
    """Partitions of n items into k blocks, each of size >= 2."""
    if (n, k) in memo:
        return memo[(n, k)]
    if n == 0 and k == 0:
        r = 1
    elif n <= 0 or k <= 0:
        r = 0
    else:
        r = k * _assoc_stirling(n - 1, k) + (n - 1) * _assoc_stirling(n - 2, k - 1)
    memo[(n, k)] = r
    return r


def _surjections(n: int, k: int) -> int:
    return sum((-1) ** i * math.comb(k, i) * (k - i) ** n for i in range(k + 1))


def count_a1_configurations(n: int, k: int) -> int:
    total = 0
    for u in range(n + 1):  # singleton subchains
        rest = n - u
        for s in range(0, rest // 2 + 1):  # shared groups
            parts = math.comb(n, u) * _assoc_stirling(rest, s)
            if parts == 0 or s > k:
                continue
            free = k - s
            if u == 0:
                assign = 1 if free == 0 else 0
            else:
                assign = _surjections(free, u) if free >= u else 0
            total += parts * math.perm(k, s) * assign
    return total


def _shapes(n: int, k: int) -> Iterator[tuple[list[list[int]], list[int]]]:
    """(groups, cores per group) for every partition that can use exactly k cores."""
    for groups in _set_partitions(n):
        shared = [g for g in groups if len(g) >= 2]
        singles = [g for g in groups if len(g) == 1]
        free = k - len(shared)
        if free < 0 or (not singles and free != 0) or (singles and free < len(singles)):
            continue
        if not singles:
            yield groups, [1] * len(groups)
            continue
        # compositions of `free` cores among singletons, each >= 1
        for comp in _compositions(free, len(singles)):
            it = iter(comp)
            yield groups, [1 if len(g) >= 2 else next(it) for g in groups]


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    if parts == 1:
        yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def _matrices_for_shape(groups, ncores, n, k) -> Iterator[np.ndarray]:
    """All labelled core assignments realising a shape."""
    order = list(range(len(groups)))

    def rec(gi, remaining):
        if gi == len(order):
            yield []
            return
        for chosen in itertools.combinations(sorted(remaining), ncores[gi]):
            for tail in rec(gi + 1, remaining - set(chosen)):
                yield [chosen] + tail

    for picks in rec(0, set(range(k))):
        a = np.zeros((n, k), dtype=bool)
        for g, cores in zip(groups, picks):
            for i in g:
                a[i, list(cores)] = True
        yield a


def enumerate_a1_configurations(n: int, k: int) -> Iterator[np.ndarray]:
    count = count_a1_configurations(n, k)
    if count > MAX_CONFIGURATIONS:
        raise InstanceTooLarge(f"{count} configurations exceed the guard of {MAX_CONFIGURATIONS}")
    for groups, ncores in _shapes(n, k):
        yield from _matrices_for_shape(groups, ncores, n, k)


# --------------------------------------------------------------------------
# solver
# --------------------------------------------------------------------------


def _relaxed(problem: Stage1Problem, factors: dict[tuple[str, str], float]) -> Stage1Problem:
    from dataclasses import replace

    pb = dict(problem.period_bounds)
    cpb = dict(problem.chain_period_bounds)
    clb = dict(problem.chain_latency_bounds)
    for (kind, key), f in factors.items():
        table = {"period": pb, "chain_period": cpb, "chain_latency": clb}[kind]
        lo, hi = table[key]
        table[key] = (lo, hi * f)
    return replace(problem, period_bounds=pb, chain_period_bounds=cpb, chain_latency_bounds=clb)


def solve_core_allocation(problem: Stage1Problem, original: Stage1Problem | None = None) -> Allocation:
    """Minimum-objective allocation; relaxes violated upper bounds when nothing is feasible."""
    count = count_a1_configurations(problem.n, problem.cores)
    if count > MAX_CONFIGURATIONS:
        raise InstanceTooLarge(f"{count} configurations exceed the guard of {MAX_CONFIGURATIONS}")
    if count == 0:
        raise Unsatisfiable(f"{problem.n} subchains cannot occupy all {problem.cores} cores "
                            "(every core needs a subchain)")

    shapes = list(_shapes(problem.n, problem.cores))
    P = np.zeros((len(shapes), problem.n))
    E = np.zeros_like(P)
    for r, (groups, ncores) in enumerate(shapes):
        for g, m in zip(groups, ncores):
            for i in g:
                P[r, i], E[r, i], _ = _timing(problem, i, len(g), m)

    factors: dict[tuple[str, str], float] = {}
    warnings: list[str] = []
    current = problem
    while True:
        obj, lat, per = _chain_values(current, P, E)
        nviol = np.array([len(_bound_violations(current, P[r], lat[r], per[r])) for r in range(len(shapes))])
        if nviol.min() == 0:
            break
        r = int(np.lexsort((obj, nviol))[0])
        for kind, key, _ in _bound_violations(current, P[r], lat[r], per[r]):
            f = factors.get((kind, key), 1.0) * problem.soft_scale
            if f > MAX_RELAXATION + 1e-9:
                raise Unsatisfiable(f"{kind} bound on {key} unsatisfiable within x{MAX_RELAXATION:g} relaxation")
            factors[(kind, key)] = f
            msg = f"relaxed {kind} upper bound on {key} by x{f:.3g}"
            warnings.append(msg)
            log.info(msg)
        current = _relaxed(problem, factors)

    feasible = np.flatnonzero(nviol == 0)
    best_obj = obj[feasible].min()
    tol = 1e-9 * max(1.0, abs(best_obj))
    winners = [r for r in feasible if obj[r] <= best_obj + tol]

    best_key, best_a = None, None
    for r in winners:
        groups, ncores = shapes[r]
        nshared = sum(1 for g in groups if len(g) >= 2)
        for a in _matrices_for_shape(groups, ncores, problem.n, problem.cores):
            key = (nshared, tuple(a.astype(int).ravel()))
            if best_key is None or key < best_key:
                best_key, best_a = key, a
    rep = check_allocation(current, best_a)
    assert rep.feasible, rep.violations
    rep.allocation.warnings = warnings
    return rep.allocation


def brute_force_allocation(problem: Stage1Problem) -> tuple[float, np.ndarray]:
    """Minimum objective over every enumerated matrix via the checker (test oracle)."""
    best = (math.inf, None)
    for a in enumerate_a1_configurations(problem.n, problem.cores):
        rep = check_allocation(problem, a)
        if rep.feasible and rep.allocation.objective_value < best[0]:
            best = (rep.allocation.objective_value, a)
    return best
