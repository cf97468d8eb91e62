"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

The numba side is compiled here directly from the loop sources, so the
comparison runs in one process whatever SENSESCHED_NO_JIT says. First-call
compile time is reported separately.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from sensesched import _kernels as K

try:
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None


def _best_of(fn, repeat, inner=1):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        for _ in range(inner):
            fn()
        best = min(best, (time.perf_counter() - t) / inner)
    return best


def cases(rng):
    pts, n = 20_000, 7
    P = rng.uniform(1, 500, (pts, n))
    E = rng.uniform(1, 100, (pts, n))
    chains = np.array([[0, -1, -1, -1, -1], [1, 4, 0, -1, -1], [1, 3, 4, 0, -1], [1, 2, 3, 4, 0], [5, 6, -1, -1, -1]])
    w = rng.uniform(0, 1, chains.shape[0])
    w3 = rng.uniform(0, 1, n)
    vals = np.sort(np.concatenate([rng.uniform(1, 2, 300), rng.uniform(30, 40, 200)]))
    windows = rng.uniform(0, 100, (5_000, 50))
    single = windows[:1]
    return [
        ("chain_eval", K._chain_eval_loop, K.chain_eval_numpy, (P, E, chains, w, w, w3)),
        ("best_split", K._best_split_loop, K.best_split_numpy, (vals,)),
        ("nearest_rank", K._nearest_rank_loop, K.nearest_rank_numpy, (windows, 0.95)),
        # one 50-sample window per call, as an online estimator sees it
        ("nearest_rank1", K._nearest_rank_loop, K.nearest_rank_numpy, (single, 0.95)),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<14}{'numpy_ms':>12}{'numba_ms':>12}{'speedup':>10}{'compile_s':>11}")
    # times are per call, best of --repeat
    for name, loop, fallback, a in cases(rng):
        inner = 1000 if a[0].size < 100 else 1
        t_np = _best_of(lambda: fallback(*a), args.repeat, inner)
        if njit is None:
            print(f"{name:<14}{t_np * 1e3:>12.3f}{'n/a':>12}{'':>10}{'':>11}")
            continue
        jit = njit(loop)
        t0 = time.perf_counter()
        jit(*a)
        compile_s = time.perf_counter() - t0
        t_jit = _best_of(lambda: jit(*a), args.repeat, inner)
        print(f"{name:<14}{t_np * 1e3:>12.3f}{t_jit * 1e3:>12.3f}{t_np / t_jit:>10.1f}{compile_s:>11.2f}")


if __name__ == "__main__":
    main()
