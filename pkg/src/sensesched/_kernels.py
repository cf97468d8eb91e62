"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Set ``SENSESCHED_NO_JIT=1`` to force the numpy path (also used when numba is
not importable). Both paths must agree to floating-point round-off; the test
suite checks this and ``benchmarks/bench_kernels.py`` times them.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

USE_JIT = HAVE_NUMBA and os.environ.get("SENSESCHED_NO_JIT", "") not in ("1", "true", "yes")


# --------------------------------------------------------------------------
# chain evaluation: many candidate period vectors at once
# --------------------------------------------------------------------------


def chain_eval_numpy(P, E, chains, w1, w2, w3):
    """Evaluate chain latency/period and the weighted objective for each row.

    P, E: (points, n) subchain periods and execution times.
    chains: (C, L) subchain indices, padded with -1.
    Latency = E[first] + sum over later members of (P + E); period = max P.
    Returns (objective (points,), latency (points, C), period (points, C)).
    """
    P = np.asarray(P, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)
    pts = P.shape[0]
    C = chains.shape[0]
    lat = np.zeros((pts, C))
    per = np.zeros((pts, C))
    for c in range(C):
        idx = chains[c][chains[c] >= 0]
        if idx.size == 0:
            continue
        lat[:, c] = E[:, idx[0]] + (P[:, idx[1:]] + E[:, idx[1:]]).sum(axis=1)
        per[:, c] = P[:, idx].max(axis=1)
    obj = lat @ w1 + per @ w2 + P @ w3
    return obj, lat, per


def _chain_eval_loop(P, E, chains, w1, w2, w3):
    pts, n = P.shape
    C, L = chains.shape
    obj = np.zeros(pts)
    lat = np.zeros((pts, C))
    per = np.zeros((pts, C))
    for r in range(pts):
        acc = 0.0
        for i in range(n):
            acc += w3[i] * P[r, i]
        for c in range(C):
            first = chains[c, 0]
            if first < 0:
                continue
            l = E[r, first]
            t = P[r, first]
            for x in range(1, L):
                s = chains[c, x]
                if s < 0:
                    break
                l += P[r, s] + E[r, s]
                if P[r, s] > t:
                    t = P[r, s]
            lat[r, c] = l
            per[r, c] = t
            acc += w1[c] * l + w2[c] * t
        obj[r] = acc
    return obj, lat, per


# --------------------------------------------------------------------------
# two-cluster split of a 1-D sample by exhaustive threshold scan
# --------------------------------------------------------------------------


def best_split_numpy(sorted_vals):
    """Return (split index s, within-cluster SSE) minimising SSE of vals[:s], vals[s:].

    ``s`` ranges over 1..n-1; returns (0, inf) when n < 2.
    """
    x = np.asarray(sorted_vals, dtype=np.float64)
    n = x.size
    if n < 2:
        return 0, np.inf
    c1 = np.cumsum(x)
    c2 = np.cumsum(x * x)
    s = np.arange(1, n)
    left_sum = c1[s - 1]
    left_sq = c2[s - 1]
    right_sum = c1[-1] - left_sum
    right_sq = c2[-1] - left_sq
    sse = (left_sq - left_sum ** 2 / s) + (right_sq - right_sum ** 2 / (n - s))
    k = int(np.argmin(sse))
    return k + 1, float(sse[k])


def _best_split_loop(x):
    n = x.shape[0]
    if n < 2:
        return 0, np.inf
    total = 0.0
    total_sq = 0.0
    for i in range(n):
        total += x[i]
        total_sq += x[i] * x[i]
    ls = 0.0
    lq = 0.0
    best = np.inf
    best_s = 0
    for s in range(1, n):
        ls += x[s - 1]
        lq += x[s - 1] * x[s - 1]
        rs = total - ls
        rq = total_sq - lq
        sse = (lq - ls * ls / s) + (rq - rs * rs / (n - s))
        if sse < best:
            best = sse
            best_s = s
    return best_s, best


# --------------------------------------------------------------------------
# nearest-rank percentile over many windows
# --------------------------------------------------------------------------


def nearest_rank_numpy(windows, pct):
    """Row-wise nearest-rank percentile of a (m, n) array."""
    w = np.sort(np.asarray(windows, dtype=np.float64), axis=1)
    n = w.shape[1]
    k = max(1, int(np.ceil(pct * n - 1e-12)))
    return w[:, k - 1].copy()


def _nearest_rank_loop(windows, pct):
    m, n = windows.shape
    k = int(np.ceil(pct * n - 1e-12))
    if k < 1:
        k = 1
    out = np.empty(m)
    a = np.empty(n)
    t = k - 1
    for r in range(m):
        for i in range(n):
            a[i] = windows[r, i]
        # in-place quickselect: only the k-th smallest is needed
        lo, hi = 0, n - 1
        while lo < hi:
            pivot = a[(lo + hi) // 2]
            i, j = lo, hi
            while i <= j:
                while a[i] < pivot:
                    i += 1
                while a[j] > pivot:
                    j -= 1
                if i <= j:
                    a[i], a[j] = a[j], a[i]
                    i += 1
                    j -= 1
            if t <= j:
                hi = j
            elif t >= i:
                lo = i
            else:
                break
        out[r] = a[t]
    return out


if USE_JIT:
    _chain_eval_jit = njit(cache=True)(_chain_eval_loop)
    _best_split_jit = njit(cache=True)(_best_split_loop)

    def chain_eval(P, E, chains, w1, w2, w3):
        return _chain_eval_jit(np.ascontiguousarray(P, dtype=np.float64),
                               np.ascontiguousarray(E, dtype=np.float64),
                               np.ascontiguousarray(chains, dtype=np.int64),
                               np.ascontiguousarray(w1, dtype=np.float64),
                               np.ascontiguousarray(w2, dtype=np.float64),
                               np.ascontiguousarray(w3, dtype=np.float64))

    def best_split(sorted_vals):
        s, sse = _best_split_jit(np.ascontiguousarray(sorted_vals, dtype=np.float64))
        return int(s), float(sse)
else:
    def chain_eval(P, E, chains, w1, w2, w3):
        return chain_eval_numpy(P, E, np.asarray(chains, dtype=np.int64), np.asarray(w1, float),
                                np.asarray(w2, float), np.asarray(w3, float))

    best_split = best_split_numpy

# a 2-D sort beats the compiled per-row loop for batches, so numpy either way
nearest_rank = nearest_rank_numpy

BACKEND = "numba" if USE_JIT else "numpy"
