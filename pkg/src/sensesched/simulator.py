"""Deterministic discrete-event simulation of schedules over a DAG.

Virtual time is in integer microseconds. Shared cores run a cyclic
executive (dispatch overhead, budget, per entry; slack and padding at the
end of each hyperperiod). Exclusive subchains run as pipelines of b lanes
triggered every p. Nodes outside the explicit schedule fire at their own
rate with zero compute.
"""

from __future__ import annotations

import csv
import heapq
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .estimator import Estimator, nearest_rank
from .model import DagSpec
from .stage1 import Stage1Problem, Unsatisfiable, solve_core_allocation
from .stage2 import FractionalSchedule, GlobalSchedule, build_global_schedule

US = 1000  # microseconds per millisecond

# same-time ordering: completions, then slot boundaries, then triggers, then re-solves
_DONE, _SLOT, _TRIGGER, _RESOLVE = 0, 1, 2, 3


class SimulationError(RuntimeError):
    """Internal invariant breach; never expected."""


def ms_to_us(ms: float) -> int:
    return int(round(ms * US))


@dataclass(frozen=True)
class SimConfig:
    duration: float = 10.0  # s
    seed: int = 0
    adaptive: bool = True
    stealing: bool = True
    static_schedule: GlobalSchedule | None = None
    warmup_discard: float = 2.0  # s
    label: str = ""

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be > 0")


@dataclass
class SimEventTrace:
    events: list[tuple[int, str, str, str]] = field(default_factory=list)
    # structured views of the same run, used by measure()
    node_outputs: dict[str, list[int]] = field(default_factory=dict)
    node_starts: dict[str, list[int]] = field(default_factory=dict)
    subchain_outputs: dict[str, list[int]] = field(default_factory=dict)
    chain_outputs: dict[str, list[tuple[int, int]]] = field(default_factory=dict)  # (output, capture)
    core_stats: dict[int, dict[str, int]] = field(default_factory=dict)
    # per core, at each hyperperiod start: (time, busy, overhead, slack, idle) cumulative us
    core_cycles: dict[int, list[tuple[int, int, int, int, int]]] = field(default_factory=dict)
    samples: dict[str, list[float]] = field(default_factory=dict)
    estimates: dict[str, float] = field(default_factory=dict)
    observed_periods: dict[str, float] = field(default_factory=dict)
    schedules: list[tuple[int, GlobalSchedule]] = field(default_factory=list)
    duration_us: int = 0
    warmup_us: int = 0

    def log(self, t: int, kind: str, entity: str, detail: str = "") -> None:
        self.events.append((t, kind, entity, detail))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time_us", "event", "entity", "detail"])
        w.writerows(self.events)
        return buf.getvalue()


# --------------------------------------------------------------------------
# runtime state
# --------------------------------------------------------------------------


class _Job:
    __slots__ = ("id", "sc", "idx", "remaining", "started", "lineage", "trigger", "batch", "draw",
                 "end_event", "node_lineage")

    def __init__(self, jid, sc, trigger, batch=1):
        self.id = jid
        self.sc = sc
        self.idx = 0
        self.remaining = 0
        self.started = False
        self.lineage: dict = {}
        self.node_lineage: dict = {}
        self.trigger = trigger
        self.batch = batch
        self.draw = 0.0
        self.end_event = None


class _SubchainRT:
    def __init__(self, sc, members, streaming):
        self.sc = sc
        self.members = members
        self.streaming = streaming
        self.owner = None  # ("core", j) | ("pipe",) | None
        self.jobs: list[_Job] = []
        self.last_output: int | None = None
        self.first_trigger: int | None = None
        self.buffer = 0  # streaming inputs waiting
        self.next_cycle = 0  # first hyperperiod index at which a trigger is due
        self.last_trigger: int | None = None
        self.deferred = False  # a trigger was skipped while a job was in flight


class _Core:
    def __init__(self, j):
        self.j = j
        self.schedule: FractionalSchedule | None = None
        self.pending: FractionalSchedule | None | str = "none"
        self.layout: list[tuple[str, int, int]] = []  # (subchain, overhead_us, budget_us)
        self.tail = 0
        self.cycle = -1
        self.phase = 0
        self.running: _Job | None = None
        self.run_start = 0
        self.slot_end = 0
        self.slot_owner: str | None = None
        self.slot_idle_from: int | None = None
        self.stolen = False
        self.token = 0
        self.active = False
        self.stats = {"busy_us": 0, "overhead_us": 0, "slack_us": 0, "idle_us": 0, "elapsed_us": 0}

    def install(self, fs: FractionalSchedule, ov_ms: float):
        self.schedule = fs
        self.layout = [(e.subchain, ms_to_us(ov_ms), int(math.ceil(e.budget_ms * US - 1e-6))) for e in fs.entries]
        self.tail = ms_to_us(fs.slack_ms + fs.pad_ms)
        self.phase = self.cycle + 1

    @property
    def cycle_us(self) -> int:
        return sum(o + b for _, o, b in self.layout) + self.tail


class Simulation:
    def __init__(self, spec: DagSpec, config: SimConfig, estimator: Estimator | None = None):
        self.spec = spec
        self.cfg = config
        c = spec.constants
        self.trace = SimEventTrace(duration_us=int(round(config.duration * 1e6)),
                                   warmup_us=int(round(config.warmup_discard * 1e6)))
        self.end = self.trace.duration_us
        self.heap: list = []
        self.seq = 0
        self.now = 0
        self.est = estimator or Estimator(c.estimator_window, c.estimator_percentile,
                                          c.bootstrap_compute_ms, c.streaming_rate_percentile)
        seed = int(config.seed) & 0xFFFFFFFFFFFFFFFF
        self.draw: dict[str, Callable[[float], float]] = {}
        for idx, n in enumerate(spec.nodes):
            self.draw[n.id] = n.compute_model.sampler(np.random.default_rng([seed, idx]))
        self.sc_rt: dict[str, _SubchainRT] = {}
        for s in spec.subchains:
            self.sc_rt[s.id] = _SubchainRT(s.id, s.node_ids, spec.is_streaming(s.id))
        self.latest: dict[str, tuple[int, dict]] = {}
        self.preds = {n.id: spec.predecessors(n.id) for n in spec.nodes}
        self.sc_of = {n: s.id for s in spec.subchains for n in s.node_ids}
        self.stream_succ = {n.id: [self.sc_of[m] for m in spec.successors(n.id)
                                   if spec.is_streaming(self.sc_of[m]) and self.sc_of[m] != self.sc_of[n.id]
                                   and spec.subchain(self.sc_of[m]).head == m]
                            for n in spec.nodes}
        self.prefixes = {ch.subchain_ids[:i] for ch in spec.chains for i in range(1, len(ch.subchain_ids) + 1)}
        self.chain_end: dict[str, list] = {}
        for ch in spec.chains:
            last = ch.node_path[-1] if ch.node_path else spec.subchain(ch.subchain_ids[-1]).node_ids[-1]
            self.chain_end.setdefault(last, []).append(ch)
        self.prio = spec.priority_order()
        steal = spec.objective.stealing
        self.can_steal = set(self.prio if steal is None else steal)
        self.cores: dict[int, _Core] = {}
        self.pipes: dict[str, dict] = {}
        self.node_busy: dict[str, int | None] = {}
        self.node_wait: dict[str, list[_Job]] = {}
        self.schedule: GlobalSchedule | None = None
        self.allocation = None
        self.jid = 0
        for n in spec.nodes:
            self.trace.node_outputs[n.id] = []
            self.trace.node_starts[n.id] = []
            self.trace.samples[n.id] = []
        for s in spec.subchains:
            self.trace.subchain_outputs[s.id] = []
        for ch in spec.chains:
            self.trace.chain_outputs[ch.id] = []

    # ---------------------------------------------------------------- events
    def at(self, t: int, rank: int, fn, *args):
        self.seq += 1
        heapq.heappush(self.heap, (t, rank, self.seq, fn, args))

    def run(self) -> SimEventTrace:
        self._start()
        while self.heap:
            t, _, _, fn, args = heapq.heappop(self.heap)
            if t > self.end:
                break
            if t < self.now:
                raise SimulationError("time went backwards")
            self.now = t
            fn(*args)
        self.now = self.end
        for core in self.cores.values():
            self._account_to(core, self.end)
        self.trace.core_stats = {j: dict(c.stats) for j, c in self.cores.items()}
        self.trace.estimates = self.est.snapshot([n.id for n in self.spec.nodes])
        self.trace.observed_periods = self.est.observed_periods(self.sc_rt)
        return self.trace

    def _start(self):
        spec = self.spec
        for s in spec.subchains:
            if not spec.is_scheduled(s.id):
                rate = spec.node(s.head).rate_hz
                if rate:
                    self.at(0, _TRIGGER, self._fire_unscheduled, s.id, ms_to_us(1000.0 / rate))
        if self.cfg.adaptive:
            c = spec.constants
            boot = {n.id: c.bootstrap_compute_ms for n in spec.nodes}
            alloc = solve_core_allocation(Stage1Problem.from_spec(spec, boot))
            self.allocation = alloc
            ones = {s: 1.0 for s in alloc.subchains}
            self._install(build_global_schedule(spec, alloc, boot, fractions=ones), "bootstrap")
            t0 = c.bootstrap_solve_delay_s
            self._plan_resolves(t0)
        else:
            sched = self.cfg.static_schedule
            if sched is None:
                alloc = solve_core_allocation(Stage1Problem.from_spec(spec))
                sched = build_global_schedule(spec, alloc)
            missing = [s for s in sched.covered() if s not in self.sc_rt]
            if missing:
                raise ValueError(f"schedule names unknown subchains {missing}")
            self._install(sched, "static")

    def _plan_resolves(self, t0: float):
        c = self.spec.constants
        s1 = set()
        s2 = set()
        t = t0
        while t * 1e6 <= self.end:
            s1.add(int(round(t * 1e6)))
            t += c.stage1_period_s
        t = t0
        while t * 1e6 <= self.end:
            s2.add(int(round(t * 1e6)))
            t += c.stage2_period_s
        for tu in sorted(s1 | s2):
            self.at(tu, _RESOLVE, self._resolve, tu in s1, tu in s2)

    # -------------------------------------------------------------- adaptive
    def _resolve(self, stage1: bool, stage2: bool):
        spec = self.spec
        c = spec.constants
        est = self.est.snapshot([n.id for n in spec.nodes])
        obs = self.est.observed_periods([s for s in spec.scheduled_subchains() if spec.is_streaming(s)])
        try:
            if stage1:
                self.allocation = solve_core_allocation(Stage1Problem.from_spec(spec, est, obs))
                self.trace.log(self.now, "resolve_stage1", "stage1", f"cost_ms={c.stage1_solve_cost_ms:g}")
            sched = build_global_schedule(spec, self.allocation, est, obs)
            self.trace.log(self.now, "resolve_stage2", "stage2", f"cost_ms={c.stage2_solve_cost_ms:g}")
        except (Unsatisfiable, ValueError) as exc:
            self.trace.log(self.now, "resolve_failed", "stage1" if stage1 else "stage2", str(exc))
            return
        self._install(sched, "adaptive")

    def _install(self, sched: GlobalSchedule, why: str):
        self.schedule = sched
        self.trace.schedules.append((self.now, sched))
        new_shared = {j: fs for j, fs in sched.shared.items()}
        # exclusive subchains switch immediately
        for s, plan in sched.plans.items():
            self._become_pipeline(s, plan)
        for j, fs in new_shared.items():
            core = self.cores.get(j)
            if core is None:
                core = self.cores[j] = _Core(j)
            if core.active:
                core.pending = fs
            else:
                core.active = True
                self._install_core(core, fs)
                self.at(self.now, _SLOT, self._slot, j, core.token, 0)
        for j, core in self.cores.items():
            if j not in new_shared and core.active:
                core.pending = None

    def _install_core(self, core: _Core, fs: FractionalSchedule):
        core.install(fs, self.spec.constants.switch_overhead_ms)
        self._adopt(core)
        for e in fs.entries:
            self.sc_rt[e.subchain].next_cycle = core.phase
            self.sc_rt[e.subchain].deferred = False

    def _adopt(self, core: _Core):
        for s, _, _ in core.layout:
            rt = self.sc_rt[s]
            if rt.owner != ("core", core.j):
                self._take_jobs_for_shared(rt)
                rt.owner = ("core", core.j)

    def _take_jobs_for_shared(self, rt: _SubchainRT):
        """Keep the oldest in-flight job when a subchain moves onto a shared core."""
        if rt.owner == ("pipe",):
            p = self.pipes.get(rt.sc)
            if p is not None:
                p["active"] = False
        for job in rt.jobs:
            self._detach(job)
        if len(rt.jobs) > 1:
            for job in rt.jobs[1:]:
                self.trace.log(self.now, "kill", rt.sc, f"job={job.id}")
            rt.jobs = rt.jobs[:1]

    def _detach(self, job: _Job):
        """Stop a job wherever it is executing, keeping its remaining work."""
        if job.end_event is not None:
            kind, key, end = job.end_event
            job.remaining = max(0, end - self.now)
            job.end_event = None
            if kind == "pipe":
                node = self.sc_rt[job.sc].members[job.idx]
                if self.node_busy.get(node) == job.id:
                    self._release(node)
            else:
                core = self.cores[key]
                if core.running is job:
                    # the pending completion goes stale via end_event; the core's
                    # slot events must survive, so the token is left alone
                    self._account_run(core)
                    core.running = None
                    core.slot_idle_from = self.now
        for q in self.node_wait.values():
            if job in q:
                q.remove(job)

    def _become_pipeline(self, s: str, plan):
        rt = self.sc_rt[s]
        p = self.pipes.get(s)
        period = max(1, ms_to_us(plan.period))
        if p is None or not p["active"]:
            old = rt.owner
            if old is not None and old[0] == "core":
                for job in rt.jobs:
                    self._detach(job)
                    self.trace.log(self.now, "migrate", s, f"job={job.id}")
            rt.owner = ("pipe",)
            token = (p["token"] + 1) if p else 0
            p = {"plan": plan, "period": period, "active": True, "token": token, "next": self.now}
            self.pipes[s] = p
            for job in rt.jobs:
                self._pipe_request(job)
            self.at(self.now, _TRIGGER, self._pipe_trigger, s, token)
        else:
            nxt = p["last"] + period if "last" in p else self.now
            p["plan"] = plan
            p["period"] = period
            p["token"] += 1
            self.at(max(self.now, nxt), _TRIGGER, self._pipe_trigger, s, p["token"])

    # ------------------------------------------------------------ node logic
    def _extend(self, lineage: dict, sc: str, out: dict):
        for key, cap in lineage.items():
            nk = key + (sc,)
            if nk in self.prefixes:
                if nk not in out or cap < out[nk]:
                    out[nk] = cap

    def _begin_node(self, job: _Job, q: int = 1):
        rt = self.sc_rt[job.sc]
        node = rt.members[job.idx]
        lin = {} if job.idx == 0 else dict(job.lineage)
        if job.idx == 0 and (job.sc,) in self.prefixes:
            lin[(job.sc,)] = job.trigger
        if not (job.idx == 0 and rt.streaming):
            for p in self.preds[node]:
                if p in self.latest and self.sc_of[p] != job.sc:
                    self._extend(self.latest[p][1], job.sc, lin)
        job.node_lineage = lin
        self.trace.node_starts[node].append(self.now)
        t_s = self.now / 1e6
        # a streaming batch is fused: one execution covers every buffered input
        d = self.draw[node](t_s)
        job.draw = d
        job.remaining = max(1, ms_to_us(self.spec.node(node).cost_at(q, d)))
        job.started = True

    def _finish_node(self, job: _Job) -> bool:
        """Record a node completion; return True when the whole subchain finished."""
        rt = self.sc_rt[job.sc]
        node = rt.members[job.idx]
        now = self.now
        self.est.record(node, job.draw, now / US)
        self.trace.samples[node].append(job.draw)
        self.latest[node] = (now, job.node_lineage)
        self.trace.node_outputs[node].append(now)
        for s in self.stream_succ[node]:
            self.sc_rt[s].buffer += 1
        for ch in self.chain_end.get(node, ()):
            cap = job.node_lineage.get(ch.subchain_ids)
            if cap is not None:
                self.trace.chain_outputs[ch.id].append((now, cap))
                self.trace.log(now, "output", ch.id, f"node={node};capture_us={cap}")
        job.lineage = job.node_lineage
        job.idx += 1
        job.started = False
        if job.idx < len(rt.members):
            return False
        rt.last_output = now
        rt.jobs.remove(job)
        self.est.record_output(rt.sc, now / US)
        self.trace.subchain_outputs[rt.sc].append(now)
        return True

    def _new_job(self, sc: str, batch: int = 1, captured: int | None = None) -> _Job:
        self.jid += 1
        job = _Job(self.jid, sc, self.now if captured is None else captured, batch)
        rt = self.sc_rt[sc]
        rt.jobs.append(job)
        if rt.first_trigger is None:
            rt.first_trigger = self.now
        detail = f"job={job.id}" + (f";batch={batch}" if batch > 1 else "")
        if captured is not None:
            detail += f";captured_us={captured}"
        self.trace.log(self.now, "trigger", sc, detail)
        return job

    # --------------------------------------------------------- unscheduled
    def _fire_unscheduled(self, sc: str, period: int):
        job = _Job(0, sc, self.now)
        rt = self.sc_rt[sc]
        for i, node in enumerate(rt.members):
            job.idx = i
            lin = {} if i == 0 else dict(job.lineage)
            if i == 0 and (sc,) in self.prefixes:
                lin[(sc,)] = self.now
            for p in self.preds[node]:
                if p in self.latest and self.sc_of[p] != sc:
                    self._extend(self.latest[p][1], sc, lin)
            self.latest[node] = (self.now, lin)
            self.trace.node_outputs[node].append(self.now)
            for s in self.stream_succ[node]:
                self.sc_rt[s].buffer += 1
            for ch in self.chain_end.get(node, ()):
                cap = lin.get(ch.subchain_ids)
                if cap is not None:
                    self.trace.chain_outputs[ch.id].append((self.now, cap))
                    self.trace.log(self.now, "output", ch.id, f"node={node};capture_us={cap}")
            job.lineage = lin
        rt.last_output = self.now
        self.trace.subchain_outputs[sc].append(self.now)
        self.at(self.now + period, _TRIGGER, self._fire_unscheduled, sc, period)

    # ------------------------------------------------------------ pipelines
    def _pipe_trigger(self, s: str, token: int):
        p = self.pipes[s]
        if not p["active"] or token != p["token"]:
            return
        p["last"] = self.now
        rt = self.sc_rt[s]
        if len(rt.jobs) < p["plan"].b:
            p["pending"] = None
            self._pipe_request(self._new_job(s))
        else:
            # the input captured now waits in a one-deep buffer (a newer one
            # replaces it) and starts once a lane frees; the grid is kept
            p["pending"] = self.now
            self.trace.log(self.now, "skip", s, "all lanes busy")
        self.at(self.now + p["period"], _TRIGGER, self._pipe_trigger, s, token)

    def _pipe_request(self, job: _Job):
        node = self.sc_rt[job.sc].members[job.idx]
        if self.node_busy.get(node) is None:
            self._pipe_run(job, node)
        else:
            self.node_wait.setdefault(node, []).append(job)

    def _pipe_run(self, job: _Job, node: str):
        self.node_busy[node] = job.id
        if not job.started:
            q = self.pipes[job.sc]["plan"].q if job.sc in self.pipes else 1
            self._begin_node(job, q)
            self.trace.log(self.now, "start", node, f"job={job.id}")
        end = self.now + job.remaining
        job.end_event = ("pipe", job.sc, end)
        self.at(end, _DONE, self._pipe_done, job, end)

    def _pipe_done(self, job: _Job, end: int):
        if job.end_event is None or job.end_event[2] != end or job.end_event[0] != "pipe":
            return
        job.end_event = None
        rt = self.sc_rt[job.sc]
        node = rt.members[job.idx]
        job.remaining = 0
        self._release(node)
        done = self._finish_node(job)
        if rt.owner != ("pipe",):
            return
        if not done:
            self._pipe_request(job)
            return
        p = self.pipes.get(job.sc)
        if p is not None and p["active"] and p.get("pending") is not None and len(rt.jobs) < p["plan"].b:
            captured, p["pending"] = p["pending"], None
            self._pipe_request(self._new_job(job.sc, captured=captured))

    def _release(self, node: str):
        self.node_busy[node] = None
        q = self.node_wait.get(node)
        while q:
            nxt = q.pop(0)
            if self.sc_rt[nxt.sc].owner == ("pipe",) and nxt in self.sc_rt[nxt.sc].jobs:
                self._pipe_run(nxt, node)
                break

    # ---------------------------------------------------------- shared cores
    def _account_run(self, core: _Core):
        if core.running is not None:
            core.stats["busy_us"] += self.now - core.run_start
            core.run_start = self.now

    def _account_to(self, core: _Core, t: int):
        if core.active:
            core.stats["elapsed_us"] = t - getattr(core, "started_at", 0)

    def _preempt(self, core: _Core):
        job = core.running
        if job is None:
            return
        self._account_run(core)
        if job.end_event is not None:
            job.remaining = job.end_event[2] - self.now
            job.end_event = None
            self.trace.log(self.now, "preempt", job.sc, f"job={job.id};remaining_us={job.remaining}")
        core.running = None
        core.token += 1

    def _slot(self, j: int, token: int, k: int):
        core = self.cores[j]
        if token != core.token:
            return
        now = self.now
        self._preempt(core)
        # idle time in the slot that just ended
        if getattr(core, "slot_idle_from", None) is not None:
            core.stats["idle_us"] += now - core.slot_idle_from
            core.slot_idle_from = None
        if k == 0:
            if not hasattr(core, "started_at"):
                core.started_at = now
            st = core.stats
            self.trace.core_cycles.setdefault(j, []).append(
                (now, st["busy_us"], st["overhead_us"], st["slack_us"], st["idle_us"]))
            if core.pending != "none":
                if core.pending is None:
                    core.active = False
                    core.pending = "none"
                    core.schedule = None
                    core.stats["elapsed_us"] = now - core.started_at
                    core.stopped = True
                    return
                self._install_core(core, core.pending)
                core.pending = "none"
            core.cycle += 1
        token = core.token
        if k < len(core.layout):
            sc, ov, budget = core.layout[k]
            start = now + ov
            end = start + budget
            core.stats["overhead_us"] += ov
            self.at(end, _SLOT, self._slot, j, token, k + 1)
            core.slot_end = end
            core.slot_owner = sc
            core.stolen = False
            rt = self.sc_rt[sc]
            if rt.owner != ("core", j):
                core.slot_idle_from = start
                return
            self._trigger_shared(core, rt)
            runner = self._steal_candidate(core, sc)
            if runner is not None:
                core.stolen = True
                self.trace.log(now, "steal", runner.sc, f"from={sc}")
            else:
                runner = rt.jobs[0] if rt.jobs else None
            self.at(start, _DONE, self._dispatch, j, token, runner)
        else:
            core.stats["slack_us"] += core.tail
            self.at(now + core.tail, _SLOT, self._slot, j, token, 0)

    def _rate_ok(self, core: _Core, rt: _SubchainRT) -> bool:
        entry = next(e for e in core.schedule.entries if e.subchain == rt.sc)
        if rt.last_trigger is None or entry.min_period_ms <= 0:
            return True
        return self.now - rt.last_trigger >= ms_to_us(entry.min_period_ms) - 1

    def _trigger_shared(self, core: _Core, rt: _SubchainRT):
        if rt.streaming:
            if not rt.jobs and rt.buffer > 0 and self._rate_ok(core, rt):
                self._start_batch(rt)
            return
        if core.cycle < rt.next_cycle or not self._rate_ok(core, rt):
            return
        if rt.jobs:
            self.trace.log(self.now, "skip", rt.sc, "job in flight")
            rt.deferred = True
            return
        self._fire_shared(core, rt)

    def _fire_shared(self, core: _Core, rt: _SubchainRT) -> _Job:
        f = core.schedule.fraction(rt.sc)
        r = max(1, int(round(1.0 / f))) if f <= 1 else 1
        rt.next_cycle = core.cycle + r
        rt.last_trigger = self.now
        rt.deferred = False
        return self._new_job(rt.sc)

    def _start_batch(self, rt: _SubchainRT) -> _Job:
        n = rt.buffer
        rt.buffer = 0
        rt.last_trigger = self.now
        return self._new_job(rt.sc, n)

    def _steal_candidate(self, core: _Core, sc: str) -> _Job | None:
        if not self.cfg.stealing or self.schedule is None:
            return None
        rank = {s: i for i, s in enumerate(self.prio)}
        mine = rank.get(sc, len(rank))
        for s, _, _ in sorted(core.layout, key=lambda e: rank.get(e[0], len(rank))):
            if rank.get(s, len(rank)) >= mine:
                break
            if s not in self.can_steal:
                continue
            rt = self.sc_rt[s]
            if rt.owner != ("core", core.j) or not rt.jobs:
                continue
            p = ms_to_us(self.schedule.periods.get(s, math.inf)) if s in self.schedule.periods else None
            if p is None:
                continue
            ref = rt.last_output if rt.last_output is not None else rt.first_trigger
            if ref is not None and self.now - ref > p:
                return rt.jobs[0]
        return None

    def _dispatch(self, j: int, token: int, job: _Job | None):
        core = self.cores[j]
        if token != core.token:
            return
        if job is None or job not in self.sc_rt[job.sc].jobs:
            core.slot_idle_from = self.now
            return
        if job.started:
            self.trace.log(self.now, "resume", job.sc, f"job={job.id}")
        self._run_on_core(core, job)

    def _run_on_core(self, core: _Core, job: _Job):
        if not job.started:
            self._begin_node(job, 1)
            self.trace.log(self.now, "start", self.sc_rt[job.sc].members[job.idx], f"job={job.id}")
        core.running = job
        core.run_start = self.now
        end = self.now + job.remaining
        if end <= core.slot_end:
            job.end_event = ("core", core.j, end)
            self.at(end, _DONE, self._core_done, core.j, core.token, job)
        else:
            job.end_event = ("core", core.j, end)  # cut at the slot boundary

    def _core_done(self, j: int, token: int, job: _Job):
        core = self.cores[j]
        if token != core.token or core.running is not job or job.end_event != ("core", j, self.now):
            return
        self._account_run(core)
        job.end_event = None
        job.remaining = 0
        core.running = None
        done = self._finish_node(job)
        if not done:
            self._run_on_core(core, job)
            return
        rt = self.sc_rt[job.sc]
        if (rt.streaming and job.sc == core.slot_owner and not core.stolen and rt.buffer > 0
                and self._rate_ok(core, rt)):
            # streaming subchains may run several batches inside their own slot
            self._run_on_core(core, self._start_batch(rt))
            return
        if (rt.deferred and job.sc == core.slot_owner and not core.stolen
                and rt.owner == ("core", j) and self._rate_ok(core, rt)):
            # the trigger skipped at slot start fires as soon as the overrun ends
            self._run_on_core(core, self._fire_shared(core, rt))
            return
        # stolen slot: hand the rest back to the slot's owner
        if core.stolen and job.sc != core.slot_owner:
            owner = self.sc_rt[core.slot_owner]
            core.stolen = False
            ov = ms_to_us(self.spec.constants.switch_overhead_ms)
            if owner.jobs and owner.owner == ("core", j) and self.now + ov < core.slot_end:
                core.stats["overhead_us"] += ov
                core.token += 1
                self.at(self.now + ov, _DONE, self._dispatch, j, core.token, owner.jobs[0])
                self._retoken_slot(core)
                return
        core.slot_idle_from = self.now

    def _retoken_slot(self, core: _Core):
        # the slot-end event was queued under the old token; queue it again
        k = next(i for i, (s, _, _) in enumerate(core.layout) if s == core.slot_owner)
        self.at(core.slot_end, _SLOT, self._slot, core.j, core.token, k + 1)


def run(spec: DagSpec, config: SimConfig, estimator: Estimator | None = None) -> SimEventTrace:
    """Simulate ``spec`` under ``config``; deterministic for a fixed seed."""
    return Simulation(spec, config, estimator).run()


# --------------------------------------------------------------------------
# measurement
# --------------------------------------------------------------------------


def _agg(xs: Sequence[float]) -> dict[str, float]:
    if len(xs) == 0:
        return {"count": 0, "mean": math.nan, "p95": math.nan, "max": math.nan}
    return {"count": len(xs), "mean": float(np.mean(xs)), "p95": float(nearest_rank(xs, 0.95)),
            "max": float(np.max(xs))}


@dataclass
class ChainSamples:
    response_time: list[float] = field(default_factory=list)  # ms, o_k - i_{k-1}
    latency: list[float] = field(default_factory=list)  # ms, o_k - i_k
    output_period: list[float] = field(default_factory=list)  # ms between consecutive o_k


@dataclass
class EmpiricalMetrics:
    chains: dict[str, ChainSamples] = field(default_factory=dict)
    subchain_periods: dict[str, list[float]] = field(default_factory=dict)  # ms
    node_throughput_hz: dict[str, float] = field(default_factory=dict)
    violations: dict[str, float] = field(default_factory=dict)  # s per bound
    window_s: float = 0.0

    @property
    def violation_seconds(self) -> float:
        return float(sum(self.violations.values()))

    def summary(self) -> dict[str, float]:
        """Flat metric name -> value map (stable key order)."""
        out: dict[str, float] = {}
        for c in sorted(self.chains):
            cs = self.chains[c]
            for name, xs in (("rt", cs.response_time), ("latency", cs.latency)):
                for k, v in _agg(xs).items():
                    if k != "count":
                        out[f"chain.{c}.{name}_{k}_ms"] = v
            out[f"chain.{c}.samples"] = float(len(cs.response_time))
        for s in sorted(self.subchain_periods):
            out[f"subchain.{s}.period_mean_ms"] = _agg(self.subchain_periods[s])["mean"]
        for n in sorted(self.node_throughput_hz):
            out[f"node.{n}.throughput_hz"] = self.node_throughput_hz[n]
        for v in sorted(self.violations):
            out[f"violation.{v}_s"] = self.violations[v]
        out["violation.total_s"] = self.violation_seconds
        return out

    def to_doc(self) -> dict:
        return {"window_s": self.window_s,
                "chains": {c: {"response_time_ms": _agg(cs.response_time), "latency_ms": _agg(cs.latency),
                               "output_period_ms": _agg(cs.output_period)} for c, cs in sorted(self.chains.items())},
                "subchain_period_ms": {s: _agg(v) for s, v in sorted(self.subchain_periods.items())},
                "node_throughput_hz": dict(sorted(self.node_throughput_hz.items())),
                "violation_s": dict(sorted(self.violations.items())),
                "violation_total_s": self.violation_seconds}

    def to_json(self) -> str:
        return json.dumps(_clean(self.to_doc()), indent=2, sort_keys=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in self.summary().items():
            w.writerow([k, _fmt(v)])
        return buf.getvalue()


def _fmt(v: float) -> str:
    return "" if isinstance(v, float) and math.isnan(v) else repr(float(v))


def _clean(x):
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, float) and math.isnan(x):
        return None
    return x


GAP_RTOL = 1e-3
GAP_ATOL_US = 2
RATE_WINDOW = 8


def _gap_violation(times: Sequence[int], t0: int, t1: int, lo_ms: float, hi_ms: float,
                   starts: Sequence[int] | None = None) -> float:
    """Seconds a realised output stream breaks period bounds [lo_ms, hi_ms] within [t0, t1].

    Too-slow: each output gap (including the open gaps at both ends) counts its
    excess over hi_ms. Too-fast: at each release (``starts`` when given, else the
    outputs), the mean of the last RATE_WINDOW gaps counts its shortfall under
    lo_ms. Releases are used because output times carry execution jitter. Both
    bounds get a small tolerance so integer-µs rounding of a pinned period
    does not register.
    """
    pts = [t for t in times if t0 <= t <= t1]
    total = 0.0
    if math.isfinite(hi_ms):
        hi = hi_ms * US * (1 + GAP_RTOL) + GAP_ATOL_US
        edges = [t0] + pts + [t1]
        for a, b in zip(edges, edges[1:]):
            total += max(0.0, (b - a) - hi)
    if lo_ms > 0:
        lo = lo_ms * US * (1 - GAP_RTOL) - GAP_ATOL_US
        if starts is not None:
            pts = [t for t in starts if t0 <= t <= t1]
        for i in range(1, len(pts)):
            n = min(i, RATE_WINDOW)
            total += max(0.0, lo - (pts[i] - pts[i - n]) / n)
    return total / 1e6


def measure(trace: SimEventTrace, spec: DagSpec) -> EmpiricalMetrics:
    """Empirical metrics from a trace, discarding the warm-up window."""
    from .analytics import hz_to_period_bounds

    t0, t1 = trace.warmup_us, trace.duration_us
    m = EmpiricalMetrics(window_s=max(0.0, (t1 - t0) / 1e6))
    if t1 <= t0:
        return m
    for ch in spec.chains:
        cs = ChainSamples()
        prev_cap = None
        prev_out = None
        for out, cap in trace.chain_outputs.get(ch.id, []):
            if prev_cap is not None and cap == prev_cap:
                continue  # same input delivered again; not a new k
            if prev_cap is not None and cap < prev_cap:
                raise SimulationError(f"chain {ch.id}: capture order reversed")
            if out >= t0 and prev_cap is not None:
                rt = (out - prev_cap) / US
                lat = (out - cap) / US
                if abs(rt - (lat + (cap - prev_cap) / US)) > 1e-9:
                    raise SimulationError("response-time identity broken")
                cs.response_time.append(rt)
                cs.latency.append(lat)
                if prev_out is not None:
                    cs.output_period.append((out - prev_out) / US)
            prev_cap, prev_out = cap, out
        m.chains[ch.id] = cs
    for s, outs in trace.subchain_outputs.items():
        pts = [t for t in outs if t >= t0]
        m.subchain_periods[s] = [(b - a) / US for a, b in zip(pts, pts[1:])]
    window = (t1 - t0) / 1e6
    for n, outs in trace.node_outputs.items():
        m.node_throughput_hz[n] = sum(1 for t in outs if t >= t0) / window
    o = spec.objective
    for n, (lo_hz, hi_hz) in o.node_throughput_hz.items():
        plo, phi = hz_to_period_bounds(lo_hz, hi_hz)
        m.violations[f"throughput.{n}"] = _gap_violation(trace.node_outputs.get(n, []), t0, t1, plo, phi,
                                                         trace.node_starts.get(n))
    for c, (lo, hi) in o.chain_period_ms.items():
        outs = [out for out, _ in trace.chain_outputs.get(c, [])]
        m.violations[f"chain_period.{c}"] = _gap_violation(outs, t0, t1, lo, hi)
    for c, (lo, hi) in o.chain_latency_ms.items():
        lat = m.chains[c].latency if c in m.chains else []
        total = sum(max(0.0, x - hi) for x in lat if math.isfinite(hi))
        total += sum(max(0.0, lo - x) for x in lat if lo > 0)
        m.violations[f"chain_latency.{c}"] = total / 1e3
    return m


# --------------------------------------------------------------------------
# baselines and comparison
# --------------------------------------------------------------------------

BASELINES = ("adaptive", "static_full", "static_20s", "equal_share", "no_steal")


def _solve_static(spec: DagSpec, estimates: Mapping[str, float],
                  observed: Mapping[str, float] | None = None) -> GlobalSchedule:
    alloc = solve_core_allocation(Stage1Problem.from_spec(spec, estimates, observed))
    return build_global_schedule(spec, alloc, estimates, observed)


def whole_run_estimates(trace: SimEventTrace, spec: DagSpec) -> dict[str, float]:
    """Tail estimates over every sample of a run (not just the sliding window)."""
    pct = spec.constants.estimator_percentile
    out = dict(trace.estimates)
    for n, xs in trace.samples.items():
        if xs:
            out[n] = nearest_rank(xs, pct)
    return out


def baseline_config(spec: DagSpec, name: str, seed: int, duration: float,
                    warmup: float = 2.0) -> SimConfig:
    """Build the SimConfig for a named baseline; profiling runs use the same seed."""
    base = SimConfig(duration=duration, seed=seed, warmup_discard=warmup, label=name)
    if name == "adaptive":
        return base
    if name == "no_steal":
        return replace(base, stealing=False)
    if name == "static_full":
        prof = run(spec, replace(base, label="profile"))
        sched = _solve_static(spec, whole_run_estimates(prof, spec), prof.observed_periods)
        return replace(base, adaptive=False, static_schedule=sched)
    if name == "static_20s":
        prof = run(spec, replace(base, duration=min(20.0, duration), label="profile"))
        sched = _solve_static(spec, prof.estimates, prof.observed_periods)
        return replace(base, adaptive=False, static_schedule=sched)
    if name == "equal_share":
        alloc = solve_core_allocation(Stage1Problem.from_spec(spec))
        sched = build_global_schedule(spec, alloc, fractions={s: 1.0 for s in alloc.subchains})
        return replace(base, adaptive=False, static_schedule=sched)
    raise ValueError(f"unknown baseline {name!r}; choose from {', '.join(BASELINES)}")


@dataclass
class Comparison:
    labels: list[str]
    rows: list[dict[str, float]]
    winners: dict[str, str]

    def to_csv(self) -> str:
        keys = sorted({k for r in self.rows for k in r})
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric"] + self.labels + ["winner"])
        for k in keys:
            w.writerow([k] + [_fmt(r.get(k, math.nan)) for r in self.rows] + [self.winners.get(k, "")])
        return buf.getvalue()


def _lower_is_better(metric: str) -> bool | None:
    if metric.endswith("throughput_hz") or metric.endswith(".samples"):
        return None
    return True


def compare_schedules(spec: DagSpec, configs: Sequence[SimConfig]) -> Comparison:
    """Run each config and tabulate metrics side by side with a per-metric winner."""
    if len(configs) < 2:
        raise ValueError("need at least two configs to compare")
    labels = [c.label or f"config{i}" for i, c in enumerate(configs)]
    rows = [measure(run(spec, c), spec).summary() for c in configs]
    winners = {}
    for k in sorted({k for r in rows for k in r}):
        if _lower_is_better(k) is None:
            continue
        vals = [(r.get(k, math.nan), i) for i, r in enumerate(rows)]
        vals = [(v, i) for v, i in vals if not math.isnan(v)]
        if not vals:
            continue
        best = min(v for v, _ in vals)
        tied = [labels[i] for v, i in vals if v == best]
        winners[k] = tied[0] if len(tied) == 1 else "tie"
    return Comparison(labels, rows, winners)
