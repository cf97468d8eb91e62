import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sensesched import presets
from sensesched.analytics import MetricWeights, pipelined_period
from sensesched.stage1 import (InstanceTooLarge, Stage1Problem, Unsatisfiable, brute_force_allocation,
                               check_allocation, count_a1_configurations, enumerate_a1_configurations,
                               multi_core_period, solve_core_allocation)


def problem(costs, cores, par=None, maxc=None, w3=None, **kw):
    ids = [f"s{i}" for i in range(len(costs))]
    return Stage1Problem(
        subchains=ids, costs=list(costs), max_costs=list(maxc or costs),
        parallelizable=list(par or [False] * len(costs)), cores=cores,
        weights=MetricWeights(w3s=dict(zip(ids, w3 or [1.0] * len(costs)))), **kw)


def a1_valid(a):
    """Independent restatement of the allocation rules."""
    row, col = a.sum(1), a.sum(0)
    if (row < 1).any() or (col < 1).any():
        return False
    return all(col[j] == 1 for i in range(a.shape[0]) if row[i] >= 2 for j in np.flatnonzero(a[i]))


# check_allocation ----------------------------------------------------------

def test_exclusive_pair():
    rep = check_allocation(problem([10, 10], 2), np.eye(2, dtype=bool))
    assert rep.feasible
    assert rep.allocation.periods == [10, 10]


def test_double_multi_core_is_rejected():
    rep = check_allocation(problem([10, 10], 2), np.ones((2, 2), dtype=bool))
    assert not rep.feasible
    assert {t for t, _ in rep.violations} == {"shared_exclusive_mix"}


def test_shared_core_period_counts_residents():
    a = np.array([[1, 0], [1, 0], [0, 1]], dtype=bool)
    rep = check_allocation(problem([5, 5, 20], 2), a)
    assert rep.feasible
    assert rep.allocation.periods == [10, 10, 20]
    assert rep.allocation.execution_times[:2] == [10, 10]


def test_empty_core_and_uncovered_subchain():
    rep = check_allocation(problem([5, 5], 2), np.array([[1, 0], [0, 0]], dtype=bool))
    tags = {t for t, _ in rep.violations}
    assert tags == {"coverage", "empty_core"}


def test_dimension_mismatch():
    with pytest.raises(ValueError, match="shape"):
        check_allocation(problem([5, 5], 2), np.ones((3, 2), dtype=bool))


def test_bound_violation_reported():
    p = problem([5, 5], 1, period_bounds={"s0": (0.0, 8.0)})
    rep = check_allocation(p, np.ones((2, 1), dtype=bool))
    assert ("period_bound", "period bound on s0 (hi) violated") in rep.violations


# enumeration ---------------------------------------------------------------

@pytest.mark.parametrize("n,k,want", [(2, 1, 1), (2, 2, 2), (3, 2, 6), (1, 3, 1), (2, 3, 6)])
def test_configuration_counts(n, k, want):
    mats = list(enumerate_a1_configurations(n, k))
    assert len(mats) == want == count_a1_configurations(n, k)


@pytest.mark.parametrize("n,k", [(1, 1), (2, 2), (3, 2), (3, 3), (2, 4), (4, 2), (3, 4)])
def test_enumeration_matches_brute_force(n, k):
    brute = set()
    for bits in itertools.product([0, 1], repeat=n * k):
        a = np.array(bits, dtype=bool).reshape(n, k)
        if a1_valid(a):
            brute.add(a.tobytes())
    got = [a.astype(bool).tobytes() for a in enumerate_a1_configurations(n, k)]
    assert len(got) == len(set(got))
    assert set(got) == brute
    assert count_a1_configurations(n, k) == len(brute)


def test_guard():
    with pytest.raises(InstanceTooLarge):
        solve_core_allocation(problem([1.0] * 12, 8))


def test_more_cores_than_subchains_needs_multicore():
    alloc = solve_core_allocation(problem([10], 3, par=[True], maxc=[5]))
    assert alloc.cores_of("s0") == [0, 1, 2]


# solver --------------------------------------------------------------------

def test_two_exclusive():
    alloc = solve_core_allocation(problem([10, 10], 2))
    assert alloc.objective_value == 20
    assert alloc.shared_cores() == []


def test_sharing_the_cheap_pair():
    alloc = solve_core_allocation(problem([5, 5, 20], 2))
    assert alloc.objective_value == 40
    assert alloc.cores_of("s0") == alloc.cores_of("s1") != alloc.cores_of("s2")


def test_parallel_subchain_takes_both_cores():
    alloc = solve_core_allocation(problem([80], 2, par=[True], maxc=[40]))
    assert alloc.cores_of("s0") == [0, 1]
    assert alloc.periods == [40]


def test_tie_break_prefers_lexicographic_matrix():
    a = solve_core_allocation(problem([10, 10], 2)).matrix.astype(int)
    assert a.tolist() == [[0, 1], [1, 0]]


costs_st = st.lists(st.floats(0.5, 50), min_size=1, max_size=4)


@settings(max_examples=40, deadline=None)
@given(costs_st, st.integers(1, 3), st.data())
def test_solver_optimal_and_feasible(costs, k, data):
    n = len(costs)
    if count_a1_configurations(n, k) == 0:
        return
    par = data.draw(st.lists(st.booleans(), min_size=n, max_size=n))
    w3 = data.draw(st.lists(st.floats(0, 2), min_size=n, max_size=n))
    maxc = [c * data.draw(st.floats(0.3, 1.0)) for c in costs]
    p = problem(costs, k, par=par, maxc=maxc, w3=w3)
    alloc = solve_core_allocation(p)
    rep = check_allocation(p, alloc.matrix)
    assert rep.feasible
    assert rep.allocation.objective_value == pytest.approx(alloc.objective_value)
    best, _ = brute_force_allocation(p)
    assert alloc.objective_value == pytest.approx(best, rel=1e-9, abs=1e-9)
    rng = np.random.default_rng(n * 7 + k)
    tried = 0
    while tried < 1000:
        a = rng.random((n, k)) < rng.uniform(0.2, 0.8)
        if not a1_valid(a):
            continue
        tried += 1
        assert alloc.objective_value <= check_allocation(p, a).allocation.objective_value + 1e-9


@settings(max_examples=100)
@given(st.floats(1, 100), st.floats(0.05, 1.0), st.integers(1, 8))
def test_period_encoding_matches_pipelining(total, frac, m):
    maxc = total * frac
    p, _ = multi_core_period(total, maxc, m, True)
    # nodes split into pieces of maxc, plus a remainder, each scaled by 1/q
    pieces = [maxc] * int(total // maxc)
    rest = total - sum(pieces)
    if rest > 1e-12:
        pieces.append(rest)
    best = min(pipelined_period([c / q for c in pieces], m, q) for q in range(1, m + 1) if m % q == 0)
    assert p == pytest.approx(best, rel=1e-12)


# relaxation ----------------------------------------------------------------

def test_upper_bound_relaxed_with_warnings():
    p = problem([5, 5], 1, period_bounds={"s0": (0.0, 6.0)}, soft_scale=1.5)
    alloc = solve_core_allocation(p)
    assert alloc.periods == [10, 10]
    assert len(alloc.warnings) == 2  # 6 -> 9 -> 13.5
    assert "x2.25" in alloc.warnings[-1]


def test_relaxation_cap():
    p = problem([50, 50], 1, period_bounds={"s0": (0.0, 1.0)})
    with pytest.raises(Unsatisfiable):
        solve_core_allocation(p)


def test_relaxation_never_increases_violations():
    p = problem([5, 5, 5], 1, period_bounds={"s0": (0, 4.0), "s1": (0, 9.0)},
                chain_period_bounds={}, soft_scale=1.2)
    counts = []
    scale = 1.0
    for _ in range(12):
        q = problem([5, 5, 5], 1, period_bounds={"s0": (0, 4.0 * scale), "s1": (0, 9.0 * scale)})
        counts.append(len(check_allocation(q, np.ones((3, 1), dtype=bool)).violations))
        scale *= 1.2
    assert counts == sorted(counts, reverse=True)
    assert counts[-1] == 0
    assert solve_core_allocation(p).warnings


# presets -------------------------------------------------------------------

@pytest.mark.parametrize("name", ["facetrack", "nav2d", "vr"])
def test_presets_solve(name):
    spec = presets.preset(name)
    alloc = solve_core_allocation(Stage1Problem.from_spec(spec))
    assert check_allocation(Stage1Problem.from_spec(spec), alloc.matrix).allocation is not None
    assert alloc.matrix.any(axis=0).all()
