"""Stage II: per-subchain parallelism and per-core fractional schedules.

Exclusive subchains pick the parallelism q minimising sum(c^q) + p(q).
Subchains sharing a core run a cyclic schedule: each hyperperiod subchain i
receives f_i * c_i of CPU, so it completes one input every 1/f_i hyperperiods.
The fractions of all shared cores are solved as one problem because chain
terms mix periods from different cores.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from .analytics import ChainMetrics, MetricWeights, hz_to_period_bounds, pipelined_period
from .model import DagSpec
from .stage1 import MAX_RELAXATION, Allocation, Unsatisfiable

log = logging.getLogger(__name__)

FRACTION_CAP = 1e3  # numeric ceiling for streaming fractions


class FractionsInfeasible(RuntimeError):
    def __init__(self, msg, violations=()):
        super().__init__(msg)
        self.violations = list(violations)


# --------------------------------------------------------------------------
# exclusive subchains
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PipelinePlan:
    subchain: str
    q: int
    b: int
    period: float
    predicted_response_time: float
    cores: tuple[int, ...] = ()
    node_costs: tuple[float, ...] = ()  # c^q per member node

    @property
    def execution_time(self) -> float:
        return sum(self.node_costs)


def select_parallelism(cost_tables: Sequence[Mapping[int, float]], k: int, subchain: str = "",
                       cores: Sequence[int] = ()) -> PipelinePlan:
    """Choose q in [1, k] minimising sum(c^q) + pipelined period; ties to smaller q.

    ``cost_tables[j][q]`` is node j's compute time using at most q cores.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    best = None
    for q in range(1, k + 1):
        costs = [t[q] for t in cost_tables]
        p = pipelined_period(costs, k, q)
        rt = sum(costs) + p
        if best is None or rt < best[0] - 1e-12:
            best = (rt, q, p, tuple(costs))
    rt, q, p, costs = best
    return PipelinePlan(subchain, q, k // q, p, rt, tuple(cores), costs)


def cost_tables(spec: DagSpec, subchain: str, k: int,
                estimates: Mapping[str, float] | None = None) -> list[dict[int, float]]:
    """Per-node c^q for q in 1..k; non-parallelisable nodes keep c^1."""
    out = []
    for n in spec.subchain(subchain).node_ids:
        node = spec.node(n)
        c1 = (estimates or {}).get(n, node.compute_model.nominal())
        out.append({q: node.cost_at(q, c1) for q in range(1, k + 1)})
    return out


# --------------------------------------------------------------------------
# fractional schedules
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ScheduleEntry:
    subchain: str
    fraction: float
    budget_ms: float
    min_period_ms: float = 0.0  # rate limit from a lower period bound


@dataclass(frozen=True)
class FractionalSchedule:
    core: int
    entries: tuple[ScheduleEntry, ...]
    hyperperiod: float  # sum of budgets
    slack_ms: float
    overhead_ms: float  # switch overhead per hyperperiod
    pad_ms: float = 0.0  # idle padding holding a pinned period

    @property
    def cycle_ms(self) -> float:
        """Wall-clock length of one hyperperiod including slack, switches and padding."""
        return self.hyperperiod + self.slack_ms + self.overhead_ms + self.pad_ms

    def fraction(self, sc: str) -> float:
        for e in self.entries:
            if e.subchain == sc:
                return e.fraction
        raise KeyError(sc)

    def period(self, sc: str) -> float:
        for e in self.entries:
            if e.subchain == sc:
                return rate_limited_period(self.cycle_ms, e.fraction, e.min_period_ms)
        raise KeyError(sc)

    def reciprocal(self, sc: str) -> int | None:
        """Hyperperiods between triggers for f <= 1; None for f > 1."""
        f = self.fraction(sc)
        if f > 1 + 1e-12:
            return None
        return max(1, int(round(1.0 / f)))

    @property
    def subchains(self) -> list[str]:
        return [e.subchain for e in self.entries]


def rate_limited_period(cycle: float, f: float, min_period: float = 0.0) -> float:
    """cycle/f, stretched to a whole number of cycles when a lower bound asks for more."""
    p = cycle / f
    if min_period > p:
        p = max(p, cycle * math.ceil(min_period / cycle - 1e-9))
    return p


@dataclass
class FractionProblem:
    """Joint fraction problem over every shared core.

    Periods and execution times of subchains not on a shared core are fixed
    inputs (``fixed``); shared subchains have execution time equal to period.
    """

    subchains: list[str]
    costs: list[float]
    streaming: list[bool]
    core_of: list[int]
    fixed: dict[str, tuple[float, float]] = field(default_factory=dict)
    chains: list[tuple[str, tuple[str, ...]]] = field(default_factory=list)
    weights: MetricWeights = field(default_factory=MetricWeights)
    period_bounds: dict[str, tuple[float, float]] = field(default_factory=dict)
    chain_period_bounds: dict[str, tuple[float, float]] = field(default_factory=dict)
    chain_latency_bounds: dict[str, tuple[float, float]] = field(default_factory=dict)
    source_period_override: dict[str, float] = field(default_factory=dict)
    priority: list[str] = field(default_factory=list)
    slack_fraction: float = 0.0
    switch_overhead_ms: float = 0.0
    min_cpu_ms: float = 1.0
    max_reciprocal: int = 8

    @classmethod
    def single_core(cls, costs: Sequence[float], streaming: Sequence[bool] | None = None,
                    w3: Sequence[float] | None = None, names: Sequence[str] | None = None,
                    **kw) -> "FractionProblem":
        n = len(costs)
        names = list(names) if names else [f"s{i + 1}" for i in range(n)]
        weights = kw.pop("weights", None)
        if weights is None:
            weights = MetricWeights(w3s={s: float(w) for s, w in zip(names, w3 or [0.0] * n)})
        return cls(names, [float(c) for c in costs], list(streaming or [False] * n), [0] * n,
                   weights=weights, **kw)

    @property
    def n(self) -> int:
        return len(self.subchains)

    @property
    def core_ids(self) -> list[int]:
        return sorted(set(self.core_of))

    def min_fraction(self, i: int) -> float:
        # a subchain cheaper than the floor cannot satisfy it; f = 1 is then the floor
        return min(1.0, self.min_cpu_ms / self.costs[i]) if not self.streaming[i] else self.min_cpu_ms / self.costs[i]

    def max_recip(self, i: int) -> int:
        return max(1, min(self.max_reciprocal, int(math.floor(self.costs[i] / self.min_cpu_ms + 1e-9))))

    def pinned(self, s: str) -> float | None:
        lo, hi = self.period_bounds.get(s, (0.0, math.inf))
        return lo if lo > 0 and math.isfinite(hi) and abs(lo - hi) <= 1e-9 * hi else None


class FractionEvaluator:
    """Vectorised objective/constraint evaluation for batches of fraction vectors."""

    def __init__(self, prob: FractionProblem):
        self.prob = prob
        names = list(prob.subchains) + list(prob.fixed)
        self.names = names
        pos = {s: i for i, s in enumerate(names)}
        L = max((len(seq) for _, seq in prob.chains), default=1)
        self.chains = -np.ones((len(prob.chains), max(L, 1)), dtype=np.int64)
        for c, (_, seq) in enumerate(prob.chains):
            self.chains[c, :len(seq)] = [pos[s] for s in seq]
        self.w1 = np.array([prob.weights.w1c.get(c, 0.0) for c, _ in prob.chains])
        self.w2 = np.array([prob.weights.w2c.get(c, 0.0) for c, _ in prob.chains])
        self.w3 = np.array([prob.weights.w3s.get(s, 0.0) for s in names])
        self.costs = np.array(prob.costs)
        cores = prob.core_ids
        self.core_idx = np.array([cores.index(j) for j in prob.core_of], dtype=np.int64)
        self.ncores = len(cores)
        self.entries_per_core = np.bincount(self.core_idx, minlength=self.ncores)
        self.fixed_p = np.array([prob.fixed[s][0] for s in prob.fixed])
        self.fixed_e = np.array([prob.fixed[s][1] for s in prob.fixed])
        self.pin = np.array([prob.pinned(s) or 0.0 for s in prob.subchains])
        lo = np.array([prob.period_bounds.get(s, (0.0, math.inf))[0] for s in prob.subchains])
        hi = np.array([prob.period_bounds.get(s, (0.0, math.inf))[1] for s in prob.subchains])
        self.p_lo, self.p_hi = lo, hi
        self.t_lo = np.array([prob.chain_period_bounds.get(c, (0.0, math.inf))[0] for c, _ in prob.chains])
        self.t_hi = np.array([prob.chain_period_bounds.get(c, (0.0, math.inf))[1] for c, _ in prob.chains])
        self.l_lo = np.array([prob.chain_latency_bounds.get(c, (0.0, math.inf))[0] for c, _ in prob.chains])
        self.l_hi = np.array([prob.chain_latency_bounds.get(c, (0.0, math.inf))[1] for c, _ in prob.chains])
        # non-pinned lower period bounds act as rate limits
        self._rl = np.array([i for i in range(prob.n) if lo[i] > 0 and prob.pinned(prob.subchains[i]) is None],
                            dtype=np.int64)
        self._rl_lo = lo[self._rl]
        self._ph, self._pl = self._active(self.p_hi, True), self._active(self.p_lo, False)
        self._th, self._tl = self._active(self.t_hi, True), self._active(self.t_lo, False)
        self._lh, self._ll = self._active(self.l_hi, True), self._active(self.l_lo, False)
        self.override = [(c, prob.source_period_override[seq[0]], [pos[s] for s in seq[1:]])
                         for c, (_, seq) in enumerate(prob.chains) if seq[0] in prob.source_period_override]

    def cycles(self, F: np.ndarray) -> np.ndarray:
        prob = self.prob
        work = np.zeros((F.shape[0], self.ncores))
        np.add.at(work.T, self.core_idx, (F * self.costs).T)
        nat = work * (1 + prob.slack_fraction) + self.entries_per_core * prob.switch_overhead_ms
        if self.pin.any():
            pinned = np.zeros_like(nat)
            np.maximum.at(pinned.T, self.core_idx, (F * self.pin).T)
            nat = np.maximum(nat, pinned)
        return nat

    def periods(self, F: np.ndarray, limited: bool = True) -> np.ndarray:
        C = self.cycles(F)[:, self.core_idx]
        P = C / F
        if limited and self._rl.size:
            idx, lo = self._rl, self._rl_lo
            Ci = C[:, idx]
            P[:, idx] = np.maximum(P[:, idx], np.where(lo > P[:, idx], Ci * np.ceil(lo / Ci - 1e-9), 0.0))
        return P

    def evaluate(self, F: np.ndarray, lower: bool = True):
        """Return (objective, violation) for each row of F; violation 0 means feasible.

        ``lower=False`` ignores lower bounds (the relaxed problem only carries upper ones).
        """
        F = np.atleast_2d(np.asarray(F, dtype=np.float64))
        P = self.periods(F, limited=lower)
        pts = F.shape[0]
        nf = len(self.fixed_p)
        Pall = np.hstack([P, np.broadcast_to(self.fixed_p, (pts, nf))]) if nf else P
        Eall = np.hstack([P, np.broadcast_to(self.fixed_e, (pts, nf))]) if nf else P
        _, lat, per = _kernels.chain_eval(Pall, Eall, self.chains, np.zeros_like(self.w1),
                                          np.zeros_like(self.w2), np.zeros(Pall.shape[1]))
        for c, obs, rest in self.override:
            per[:, c] = np.maximum(obs, Pall[:, rest].max(axis=1)) if rest else obs
        obj = lat @ self.w1 + per @ self.w2 + Pall @ self.w3
        viol = self._upper_viol(P, self._ph) + self._upper_viol(per, self._th) + self._upper_viol(lat, self._lh)
        if lower:
            viol += self._lower_viol(P, self._pl) + self._lower_viol(per, self._tl) + self._lower_viol(lat, self._ll)
        return obj, viol

    @staticmethod
    def _active(bound, upper):
        idx = np.flatnonzero(np.isfinite(bound) & (bound > 0)) if upper else np.flatnonzero(bound > 0)
        return idx, bound[idx]

    @staticmethod
    def _upper_viol(val, active, tol=1e-9):
        idx, b = active
        if idx.size == 0:
            return np.zeros(val.shape[0])
        return np.maximum(0.0, val[:, idx] / b - 1 - tol).sum(axis=1)

    @staticmethod
    def _lower_viol(val, active, tol=1e-9):
        idx, b = active
        if idx.size == 0:
            return np.zeros(val.shape[0])
        return np.maximum(0.0, 1 - val[:, idx] / b - tol).sum(axis=1)

    def violated_bounds(self, f: np.ndarray) -> list[tuple[str, str, str]]:
        """Names of the bounds a single fraction vector breaks: (kind, key, side)."""
        f = np.atleast_2d(f)
        P = self.periods(f)[0]
        nf = len(self.fixed_p)
        Pall = np.concatenate([P, self.fixed_p]) if nf else P
        Eall = np.concatenate([P, self.fixed_e]) if nf else P
        _, lat, per = _kernels.chain_eval(Pall[None], Eall[None], self.chains, np.zeros_like(self.w1),
                                          np.zeros_like(self.w2), np.zeros(Pall.shape[0]))
        for c, obs, rest in self.override:
            per[:, c] = max(obs, Pall[rest].max()) if rest else obs
        out = []
        tol = 1e-9
        for i, s in enumerate(self.prob.subchains):
            if P[i] > self.p_hi[i] * (1 + tol):
                out.append(("period", s, "hi"))
            if P[i] < self.p_lo[i] * (1 - tol):
                out.append(("period", s, "lo"))
        for c, (cid, _) in enumerate(self.prob.chains):
            if per[0, c] > self.t_hi[c] * (1 + tol):
                out.append(("chain_period", cid, "hi"))
            if per[0, c] < self.t_lo[c] * (1 - tol):
                out.append(("chain_period", cid, "lo"))
            if lat[0, c] > self.l_hi[c] * (1 + tol):
                out.append(("chain_latency", cid, "hi"))
            if lat[0, c] < self.l_lo[c] * (1 - tol):
                out.append(("chain_latency", cid, "lo"))
        return out


@dataclass
class FractionSolution:
    fractions: dict[str, float]
    objective: float
    relaxed: dict[str, float]  # continuous optimum, for diagnostics
    schedules: dict[int, FractionalSchedule]


def _line_min(fn, lo, hi, points=21, rounds=6):
    """Minimise a convex 1-D function by repeated batched grid refinement.

    ``fn`` maps an array of step lengths to an array of values.
    """
    a, b = lo, hi
    best_t, best_v = a, math.inf
    for _ in range(rounds):
        ts = np.linspace(a, b, points)
        vs = fn(ts)
        k = int(np.argmin(vs))
        if vs[k] < best_v:
            best_t, best_v = float(ts[k]), float(vs[k])
        step = (b - a) / (points - 1)
        a, b = max(lo, ts[k] - step), min(hi, ts[k] + step)
        if b - a <= 1e-12:
            break
    return best_t, best_v


def _coordinate_descent(fun, u0, lo, hi, free, rtol=1e-6, max_iter=10_000, damping=1.0):
    """Minimise a convex function over a box by exact line searches.

    ``fun`` is batched: (points, n) -> (points,). Sweeps over the coordinate
    axes run to convergence; then pair directions e_i - e_j and e_i + e_j are
    tried, which lets the search slide along kinks of max() terms. The two
    phases alternate until neither improves.
    """
    u = np.array(u0, dtype=np.float64)
    val = float(fun(u[None, :])[0])
    axes = []
    for i in free:
        e = np.zeros_like(u)
        e[i] = 1.0
        axes.append(e)
    pairs = []
    for i, j in itertools.combinations(free, 2):
        for sign in (-1.0, 1.0):
            e = np.zeros_like(u)
            e[i], e[j] = 1.0, sign
            pairs.append(e)
    it = 0

    def sweep(dirs):
        nonlocal u, val, it
        for d in dirs:
            it += 1
            tlo, thi = -np.inf, np.inf
            for k in np.flatnonzero(d):
                a = (lo[k] - u[k]) / d[k]
                b = (hi[k] - u[k]) / d[k]
                tlo, thi = max(tlo, min(a, b)), min(thi, max(a, b))
            if not thi > tlo:
                continue
            t, v = _line_min(lambda ts: fun(u[None, :] + ts[:, None] * d[None, :]), tlo, thi)
            if v < val:
                u = np.clip(u + damping * t * d, lo, hi)
                val = float(fun(u[None, :])[0])

    while it < max_iter:
        start = val
        while it < max_iter:
            prev = val
            sweep(axes)
            if abs(prev - val) <= rtol * max(1.0, abs(val)):
                break
        if not pairs:
            break
        before = val
        sweep(pairs)
        if abs(before - val) <= rtol * max(1.0, abs(val)) or abs(start - val) <= rtol * max(1.0, abs(val)):
            break
    return u, val


def _box(prob: FractionProblem) -> tuple[np.ndarray, np.ndarray]:
    lo = np.array([math.log(max(prob.min_fraction(i), 1.0 / prob.max_recip(i))) if not prob.streaming[i]
                   else math.log(prob.min_fraction(i)) for i in range(prob.n)])
    hi = np.array([0.0 if not prob.streaming[i] else math.log(FRACTION_CAP) for i in range(prob.n)])
    return lo, hi


def _penalised(ev: FractionEvaluator, scale: float):
    rho = 1e3 * max(scale, 1.0)

    def fun(U):
        obj, viol = ev.evaluate(np.exp(U), lower=False)
        return obj + rho * viol
    return fun


def _order_key(prob: FractionProblem, f: np.ndarray) -> tuple:
    ranks = [prob.subchains.index(s) for s in prob.priority if s in prob.subchains]
    ranks += [i for i in range(prob.n) if i not in ranks]
    return tuple(-f[i] for i in ranks)


def solve_fractions(prob: FractionProblem, rtol: float = 1e-6, max_iter: int = 10_000) -> FractionSolution:
    """Continuous log-space solve, then exact evaluation of the integral-reciprocal neighbours."""
    if prob.n == 0:
        return FractionSolution({}, 0.0, {}, {})
    ev = FractionEvaluator(prob)
    lo, hi = _box(prob)
    obj0, _ = ev.evaluate(np.ones((1, prob.n)))
    fun = _penalised(ev, float(abs(obj0[0])))
    u0 = np.clip(np.zeros(prob.n), lo, hi)
    u, _ = _coordinate_descent(fun, u0, lo, hi, list(range(prob.n)), rtol, max_iter)
    stream = [i for i in range(prob.n) if prob.streaming[i]]
    fixed_idx = [i for i in range(prob.n) if not prob.streaming[i]]
    if fixed_idx:
        # normalise: the fastest non-streaming subchain runs every hyperperiod
        u = np.clip(u - u[fixed_idx].max(), lo, hi)
    relaxed = np.exp(u)
    relaxed_periods = ev.periods(relaxed[None, :])[0]
    options = []
    for i in fixed_idx:
        r = 1.0 / relaxed[i]
        cands = {min(max(int(math.floor(r)), 1), prob.max_recip(i)),
                 min(max(int(math.ceil(r - 1e-12)), 1), prob.max_recip(i))}
        if ev.p_lo[i] > 0:
            # lower period bounds are absent from the relaxation; add the reciprocals that meet them
            cycle = relaxed_periods[i] * relaxed[i]
            need = int(math.ceil(ev.p_lo[i] / cycle - 1e-9))
            cands |= {min(max(need + d, 1), prob.max_recip(i)) for d in (0, 1, 2)}
        options.append(sorted(cands))

    best = _search_grid(prob, ev, fixed_idx, stream, options, relaxed, lo, hi, rtol)
    if best is None:
        # neighbours all infeasible: widen to the full reciprocal range when small enough
        full = [list(range(1, prob.max_recip(i) + 1)) for i in fixed_idx]
        if math.prod(len(o) for o in full) <= 200_000:
            best = _search_grid(prob, ev, fixed_idx, stream, full, relaxed, lo, hi, rtol, reopt=False)
            if best is not None and stream:
                g = _reopt_streaming(ev, best[0], stream, lo, hi, rtol)
                obj, viol = ev.evaluate(g[None, :])
                if viol[0] <= 0 and obj[0] < best[1]:
                    best = (g, float(obj[0]))
    if best is None:
        worst = relaxed.copy()
        for i in fixed_idx:
            worst[i] = 1.0 / min(max(round(1.0 / relaxed[i]), 1), prob.max_recip(i))
        raise FractionsInfeasible("no integral-reciprocal fraction vector meets the bounds",
                                  ev.violated_bounds(worst))
    f, val = best
    return FractionSolution(dict(zip(prob.subchains, f.tolist())), val,
                            dict(zip(prob.subchains, relaxed.tolist())), build_schedules(prob, f))


def _reopt_streaming(ev, f, stream, lo, hi, rtol):
    scale = max(1.0, abs(float(ev.evaluate(f[None, :])[0][0])))

    def sub(US):
        G = np.repeat(f[None, :], US.shape[0], axis=0)
        G[:, stream] = np.exp(US)
        obj, viol = ev.evaluate(G)
        return obj + 1e3 * scale * viol
    us, _ = _coordinate_descent(sub, np.log(f[stream]), lo[stream], hi[stream],
                                list(range(len(stream))), rtol, 2000)
    g = f.copy()
    g[stream] = np.exp(us)
    return g


def _search_grid(prob, ev, fixed_idx, stream, options, relaxed, lo, hi, rtol, reopt=True):
    combos = [c for c in itertools.product(*options) if not c or min(c) == 1]
    if not combos:
        return None
    F = np.repeat(relaxed[None, :], len(combos), axis=0)
    if fixed_idx:
        F[:, fixed_idx] = 1.0 / np.array(combos, dtype=np.float64)
    if stream and reopt:
        F = np.array([_reopt_streaming(ev, f, stream, lo, hi, rtol) for f in F])
    obj, viol = ev.evaluate(F)
    ok = np.flatnonzero(viol <= 0)
    if ok.size == 0:
        return None
    k = min(ok, key=lambda r: (round(float(obj[r]), 9), _order_key(prob, F[r])))
    return F[k], float(obj[k])


def brute_force_fractions(prob: FractionProblem, R: int | None = None, grid_points: int = 64,
                          stream_max: float = 4.0) -> FractionSolution:
    """Exhaustive oracle: 1/f in {1..R} for non-streaming, geometric grid for streaming.

    Like the solver, at least one non-streaming subchain runs every hyperperiod.
    """
    if prob.n > 4:
        raise ValueError("oracle guard: at most 4 subchains")
    R = R or prob.max_reciprocal
    ev = FractionEvaluator(prob)
    axes = []
    for i in range(prob.n):
        if prob.streaming[i]:
            axes.append(np.geomspace(prob.min_cpu_ms / prob.costs[i], stream_max, grid_points))
        else:
            rs = np.arange(1, R + 1)
            fs = 1.0 / rs
            axes.append(fs[fs * prob.costs[i] >= min(prob.min_cpu_ms, prob.costs[i]) - 1e-12])
    grids = np.meshgrid(*axes, indexing="ij")
    F = np.stack([g.ravel() for g in grids], axis=1)
    fixed_idx = [i for i in range(prob.n) if not prob.streaming[i]]
    if fixed_idx:
        F = F[F[:, fixed_idx].max(axis=1) == 1.0]
    obj, viol = ev.evaluate(F)
    ok = np.flatnonzero(viol <= 0)
    if ok.size == 0:
        raise FractionsInfeasible("no grid point meets the bounds")
    k = ok[np.argmin(obj[ok])]
    f = F[k]
    return FractionSolution(dict(zip(prob.subchains, f.tolist())), float(obj[k]), {},
                            build_schedules(prob, f))


def _rate_limit(prob: FractionProblem, s: str) -> float:
    lo = prob.period_bounds.get(s, (0.0, math.inf))[0]
    return 0.0 if prob.pinned(s) is not None else float(lo)


def build_schedules(prob: FractionProblem, f: np.ndarray) -> dict[int, FractionalSchedule]:
    out = {}
    for j in prob.core_ids:
        members = [i for i in range(prob.n) if prob.core_of[i] == j]
        rank = {s: k for k, s in enumerate(prob.priority)}
        members.sort(key=lambda i: (rank.get(prob.subchains[i], len(rank)), i))
        entries = tuple(ScheduleEntry(prob.subchains[i], float(f[i]), float(f[i] * prob.costs[i]),
                                      _rate_limit(prob, prob.subchains[i]))
                        for i in members)
        H = sum(e.budget_ms for e in entries)
        slack = prob.slack_fraction * H
        ov = len(entries) * prob.switch_overhead_ms
        natural = H + slack + ov
        pin = max((prob.pinned(prob.subchains[i]) or 0.0) * f[i] for i in members)
        out[j] = FractionalSchedule(j, entries, H, slack, ov, max(0.0, pin - natural))
    return out


# --------------------------------------------------------------------------
# global schedule
# --------------------------------------------------------------------------


@dataclass
class GlobalSchedule:
    shared: dict[int, FractionalSchedule]
    plans: dict[str, PipelinePlan]
    periods: dict[str, float]
    execution_times: dict[str, float]
    chain_metrics: dict[str, ChainMetrics]
    objective: float
    warnings: list[str] = field(default_factory=list)
    allocation: np.ndarray | None = None
    subchain_order: list[str] = field(default_factory=list)

    def core_of(self, sc: str) -> int | None:
        for j, fs in self.shared.items():
            if sc in fs.subchains:
                return j
        return None

    def covered(self) -> list[str]:
        out = list(self.plans)
        for fs in self.shared.values():
            out += fs.subchains
        return out

    def to_doc(self) -> dict:
        return {
            "schema": 1,
            "objective": self.objective,
            "warnings": list(self.warnings),
            "allocation": None if self.allocation is None else self.allocation.astype(int).tolist(),
            "subchain_order": list(self.subchain_order),
            "shared_cores": [
                {"core": j, "hyperperiod_ms": fs.hyperperiod, "slack_ms": fs.slack_ms,
                 "overhead_ms": fs.overhead_ms, "pad_ms": fs.pad_ms, "cycle_ms": fs.cycle_ms,
                 "entries": [{"subchain": e.subchain, "fraction": e.fraction, "budget_ms": e.budget_ms,
                              "min_period_ms": e.min_period_ms,
                              "period_ms": fs.period(e.subchain)} for e in fs.entries]}
                for j, fs in sorted(self.shared.items())],
            "pipelines": [
                {"subchain": p.subchain, "q": p.q, "b": p.b, "period_ms": p.period,
                 "predicted_response_time_ms": p.predicted_response_time, "cores": list(p.cores),
                 "node_costs_ms": list(p.node_costs)}
                for p in self.plans.values()],
            "periods_ms": dict(self.periods),
            "execution_times_ms": dict(self.execution_times),
            "chains": {c: {"latency_ms": m.latency, "period_ms": m.period,
                           "response_time_ms": m.response_time} for c, m in self.chain_metrics.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_doc(), indent=2)

    @classmethod
    def from_doc(cls, doc: dict) -> "GlobalSchedule":
        shared = {}
        for c in doc["shared_cores"]:
            entries = tuple(ScheduleEntry(e["subchain"], e["fraction"], e["budget_ms"], e.get("min_period_ms", 0.0)) for e in c["entries"])
            shared[c["core"]] = FractionalSchedule(c["core"], entries, c["hyperperiod_ms"], c["slack_ms"],
                                                   c["overhead_ms"], c.get("pad_ms", 0.0))
        plans = {p["subchain"]: PipelinePlan(p["subchain"], p["q"], p["b"], p["period_ms"],
                                             p["predicted_response_time_ms"], tuple(p["cores"]),
                                             tuple(p["node_costs_ms"])) for p in doc["pipelines"]}
        metrics = {c: ChainMetrics(m["latency_ms"], m["period_ms"]) for c, m in doc["chains"].items()}
        alloc = None if doc.get("allocation") is None else np.array(doc["allocation"], dtype=bool)
        return cls(shared, plans, dict(doc["periods_ms"]), dict(doc["execution_times_ms"]), metrics,
                   doc["objective"], list(doc.get("warnings", [])), alloc, list(doc.get("subchain_order", [])))

    def with_period(self, sc: str, period: float) -> "GlobalSchedule":
        """Copy with an exclusive subchain's source period overridden (for sweeps)."""
        plan = self.plans[sc]
        plans = dict(self.plans)
        plans[sc] = replace(plan, period=float(period),
                            predicted_response_time=plan.execution_time + float(period))
        periods = dict(self.periods)
        periods[sc] = float(period)
        return replace(self, plans=plans, periods=periods)


def _period_bounds(spec: DagSpec) -> dict[str, tuple[float, float]]:
    o = spec.objective
    out = {}
    for s in spec.scheduled_subchains():
        lo, hi = 0.0, math.inf
        for n in spec.subchain(s).node_ids:
            if n in o.node_throughput_hz:
                plo, phi = hz_to_period_bounds(*o.node_throughput_hz[n])
                lo, hi = max(lo, plo), min(hi, phi)
        if lo > 0 or not math.isinf(hi):
            out[s] = (lo, hi)
    return out


def build_global_schedule(spec: DagSpec, allocation: Allocation, estimates: Mapping[str, float] | None = None,
                          observed_periods: Mapping[str, float] | None = None,
                          fractions: Mapping[str, float] | None = None) -> GlobalSchedule:
    """Turn a Stage I allocation into plans and fractional schedules.

    ``fractions`` bypasses the fraction solver (e.g. the bootstrap f = 1 schedule).
    """
    est = dict(spec.nominal_costs())
    if estimates:
        est.update(estimates)
    c = spec.constants
    bounds = _period_bounds(spec)
    warnings = list(allocation.warnings)
    sched = allocation.subchains
    a = allocation.matrix
    plans: dict[str, PipelinePlan] = {}
    shared_members: list[tuple[str, int]] = []
    for i, s in enumerate(sched):
        cores = [int(j) for j in np.flatnonzero(a[i])]
        if len(cores) == 1 and a[:, cores[0]].sum() >= 2:
            shared_members.append((s, cores[0]))
            continue
        plan = select_parallelism(cost_tables(spec, s, len(cores), est), len(cores), s, cores)
        lo, hi = bounds.get(s, (0.0, math.inf))
        if plan.period < lo:
            plan = replace(plan, period=lo, predicted_response_time=plan.execution_time + lo)
        if plan.period > hi * (1 + 1e-9):
            warnings.append(f"subchain {s}: period {plan.period:.3f} ms exceeds bound {hi:.3f} ms")
        plans[s] = plan

    fixed = {s: (spec.fixed_period_ms(s), 0.0) for s in (x.id for x in spec.subchains) if s not in sched}
    for s, p in plans.items():
        fixed[s] = (p.period, p.execution_time)

    override = {s: p for s, p in (observed_periods or {}).items() if s in sched and spec.is_streaming(s)}
    chain_ids = [ch.id for ch in spec.chains]
    weights = MetricWeights.from_objective(spec.objective, chain_ids)
    shared: dict[int, FractionalSchedule] = {}
    periods = {s: v[0] for s, v in fixed.items()}
    ex = {s: v[1] for s, v in fixed.items()}
    if shared_members:
        prob = FractionProblem(
            subchains=[s for s, _ in shared_members],
            costs=[sum(est[n] for n in spec.subchain(s).node_ids) for s, _ in shared_members],
            streaming=[spec.is_streaming(s) for s, _ in shared_members],
            core_of=[j for _, j in shared_members], fixed=fixed,
            chains=[(ch.id, ch.subchain_ids) for ch in spec.chains], weights=weights,
            period_bounds={s: b for s, b in bounds.items() if s in dict(shared_members)},
            chain_period_bounds=dict(spec.objective.chain_period_ms),
            chain_latency_bounds=dict(spec.objective.chain_latency_ms),
            source_period_override=override, priority=spec.priority_order(),
            slack_fraction=c.slack_fraction, switch_overhead_ms=c.switch_overhead_ms,
            min_cpu_ms=c.min_cpu_ms_per_hyperperiod, max_reciprocal=c.max_reciprocal,
        )
        if fractions is not None:
            f = np.array([fractions.get(s, 1.0) for s in prob.subchains], dtype=np.float64)
            shared = build_schedules(prob, f)
        else:
            shared = _solve_with_relaxation(prob, spec.objective.soft_scale, warnings)
        for fs in shared.values():
            for e in fs.entries:
                periods[e.subchain] = float(fs.period(e.subchain))
                ex[e.subchain] = periods[e.subchain]

    metrics = {}
    for ch in spec.chains:
        seq = ch.subchain_ids
        lat = ex[seq[0]] + sum(periods[s] + ex[s] for s in seq[1:])
        per = max(periods[s] for s in seq)
        if seq[0] in override:
            per = max([override[seq[0]]] + [periods[s] for s in seq[1:]])
        metrics[ch.id] = ChainMetrics(lat, per)
    obj = sum(weights.w1c.get(cid, 0.0) * m.latency + weights.w2c.get(cid, 0.0) * m.period
              for cid, m in metrics.items())
    obj += sum(w * periods[s] for s, w in weights.w3s.items() if s in periods)
    for w in warnings[len(allocation.warnings):]:
        log.info(w)
    return GlobalSchedule(shared, plans, periods, ex, metrics, obj, warnings, a.copy(), list(sched))


def _solve_with_relaxation(prob: FractionProblem, scale: float, warnings: list[str]) -> dict[int, FractionalSchedule]:
    factors: dict[tuple[str, str, str], float] = {}
    base = prob
    while True:
        try:
            return solve_fractions(prob).schedules
        except FractionsInfeasible as exc:
            if not exc.violations:
                raise Unsatisfiable(str(exc)) from None
            for kind, key, side in exc.violations:
                f = factors.get((kind, key, side), 1.0) * scale
                if f > MAX_RELAXATION + 1e-9:
                    raise Unsatisfiable(f"{kind} bound on {key} unsatisfiable within x{MAX_RELAXATION:g}") from None
                factors[(kind, key, side)] = f
                warnings.append(f"relaxed {kind} {'upper' if side == 'hi' else 'lower'} bound on {key} by x{f:.3g}")
            prob = _relax_fraction_problem(base, factors)


def _relax_fraction_problem(prob: FractionProblem, factors) -> FractionProblem:
    tables = {"period": dict(prob.period_bounds), "chain_period": dict(prob.chain_period_bounds),
              "chain_latency": dict(prob.chain_latency_bounds)}
    for (kind, key, side), f in factors.items():
        lo, hi = tables[kind][key]
        if side == "hi":
            hi = hi * f
        else:
            lo = lo / f
        tables[kind][key] = (lo, hi)
    return replace(prob, period_bounds=tables["period"], chain_period_bounds=tables["chain_period"],
                   chain_latency_bounds=tables["chain_latency"])
