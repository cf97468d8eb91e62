"""Exhaustive discrete-time search for the best achievable pipeline response time.

Used to check the analytical parallelism rule against an optimum on tiny
instances. Model, on a slotted timeline:

- a chain of m nodes, each single-instance; node j run with q cores takes
  ``cost[j] / q`` (perfect scaling), rounded to whole slots;
- a latest-only buffer between consecutive nodes; a node only starts on an
  input it has not consumed yet, and node 1 captures a fresh input when it starts;
- response time of output k is its time minus the capture time of output k-1.

The optimum is the smallest bound theta for which an infinite schedule exists
whose every response time is <= theta, i.e. a cycle is reachable in the state
graph pruned at theta.
"""

from __future__ import annotations

from collections import deque
from fractions import Fraction
from typing import Sequence

# node state: None (idle) or (remaining slots, q, capture age)
# buffer state: None (empty or consumed) or capture age of the fresh item


def _slots_per_ms(costs: Sequence[int], k: int) -> int:
    """Smallest slot subdivision making every c/q integral."""
    den = 1
    for c in costs:
        for q in range(1, k + 1):
            d = Fraction(c, q).denominator
            den = den * d // _gcd(den, d)
    return den


def _gcd(a: int, b: int) -> int:
    while b:
        a, b = b, a % b
    return a


def _step(state, starts, dur, theta):
    """Apply start decisions, advance one slot, return new state or None if pruned."""
    nodes, bufs, last = state
    m = len(nodes)
    nodes = list(nodes)
    bufs = list(bufs)
    for j, q in starts:
        if j == 0:
            age = 0
        else:
            age = bufs[j - 1]
            bufs[j - 1] = None
        nodes[j] = (dur[j][q], q, age)
    # time passes
    bufs = [None if b is None else b + 1 for b in bufs]
    if last is not None:
        last += 1
    for j in range(m):
        if nodes[j] is None:
            continue
        rem, q, age = nodes[j]
        rem -= 1
        age += 1
        if rem == 0:
            nodes[j] = None
            if j == m - 1:
                if last is not None and last > theta:
                    return None
                last = age
            else:
                bufs[j] = age
        else:
            nodes[j] = (rem, q, age)
    if last is not None and last > theta:
        return None
    for n in nodes:
        if n is not None and n[2] >= theta:
            return None
    for b in bufs:
        if b is not None and b >= theta:
            return None
    return (tuple(nodes), tuple(bufs), last)


def _decisions(state, k):
    nodes, bufs, _ = state
    m = len(nodes)
    busy = sum(n[1] for n in nodes if n is not None)
    free = k - busy
    cands = []
    for j in range(m):
        if nodes[j] is not None:
            continue
        if j > 0 and bufs[j - 1] is None:
            continue
        cands.append(j)
    out = [()]
    for j in cands:
        nxt = []
        for d in out:
            used = sum(q for _, q in d)
            nxt.append(d)
            for q in range(1, free - used + 1):
                nxt.append(d + ((j, q),))
        out = nxt
    return out


def has_cycle(costs: Sequence[int], k: int, theta_slots: int, spm: int) -> bool:
    m = len(costs)
    dur = [{q: int(Fraction(c, q) * spm) for q in range(1, k + 1)} for c in costs]
    start = (tuple([None] * m), tuple([None] * (m - 1)), None)
    succ: dict = {}
    frontier = deque([start])
    succ[start] = None
    while frontier:
        s = frontier.popleft()
        nxt = set()
        for d in _decisions(s, k):
            t = _step(s, d, dur, theta_slots)
            if t is not None:
                nxt.add(t)
        succ[s] = nxt
        for t in nxt:
            if t not in succ:
                succ[t] = None
                frontier.append(t)
    # keep states that have produced an output; peel states without successors
    alive = {s for s in succ if s[2] is not None}
    outdeg = {s: sum(1 for t in succ[s] if t in alive) for s in alive}
    preds: dict = {s: [] for s in alive}
    for s in alive:
        for t in succ[s]:
            if t in alive:
                preds[t].append(s)
    dead = deque(s for s, d in outdeg.items() if d == 0)
    removed = set()
    while dead:
        s = dead.popleft()
        if s in removed:
            continue
        removed.add(s)
        for p in preds[s]:
            if p in removed:
                continue
            outdeg[p] -= 1
            if outdeg[p] == 0:
                dead.append(p)
    return len(removed) < len(alive)


def optimal_response_time(costs: Sequence[int], k: int) -> float:
    """Minimal steady-state worst response time (ms) over all slotted schedules."""
    if not costs or k < 1:
        raise ValueError("need at least one node and one core")
    spm = _slots_per_ms(costs, k)
    hi = 2 * sum(costs) * spm  # sequential single-core execution always achieves this
    lo = 1
    while lo < hi:
        mid = (lo + hi) // 2
        if has_cycle(costs, k, mid, spm):
            hi = mid
        else:
            lo = mid + 1
    return lo / spm
