"""Closed-form chain and subchain metric models (all times in ms)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .model import ObjectiveSpec


@dataclass(frozen=True)
class SubchainTiming:
    period: float
    execution_time: float
    parallelism: int = 1
    pipeline_width: int = 1


@dataclass(frozen=True)
class ChainMetrics:
    latency: float
    period: float

    @property
    def response_time(self) -> float:
        return self.latency + self.period

    @property
    def throughput_hz(self) -> float:
        return 1000.0 / self.period if self.period > 0 else math.inf


@dataclass(frozen=True)
class MetricWeights:
    w1c: Mapping[str, float] = field(default_factory=dict)
    w2c: Mapping[str, float] = field(default_factory=dict)
    w3s: Mapping[str, float] = field(default_factory=dict)

    @classmethod
    def from_objective(cls, obj: ObjectiveSpec, chain_ids: Sequence[str]) -> "MetricWeights":
        """Fold response-time weights into equal latency and period weights."""
        return cls({c: obj.latency_weight(c) for c in chain_ids},
                   {c: obj.period_weight(c) for c in chain_ids},
                   dict(obj.w3s))


def pipelined_period(costs: Sequence[float], k: int, q: int) -> float:
    """Source period for one subchain on ``k`` cores with per-node parallelism ``q``.

    The slowest node bounds the rate, and so does the total work spread over
    floor(k/q) pipeline lanes.
    """
    if q < 1 or k < 1:
        raise ValueError("k and q must be >= 1")
    if q > k:
        raise ValueError(f"parallelism q={q} exceeds cores k={k}")
    if not costs:
        raise ValueError("empty cost list")
    lanes = k // q
    return max(max(costs), sum(costs) / lanes)


def chain_metrics_stage2(periods: Sequence[float]) -> ChainMetrics:
    """Worst-case latency p1 + sum(2 p_x) for x >= 2; period = max p."""
    if len(periods) == 0:
        raise ValueError("empty chain")
    lat = periods[0] + sum(2.0 * p for p in periods[1:])
    return ChainMetrics(lat, max(periods))


def chain_metrics_stage1(timings: Sequence[SubchainTiming]) -> ChainMetrics:
    """Latency ex_1 + sum(ex_r + p_r) over later subchains; period = max p."""
    if len(timings) == 0:
        raise ValueError("empty chain")
    lat = timings[0].execution_time + sum(t.execution_time + t.period for t in timings[1:])
    return ChainMetrics(lat, max(t.period for t in timings))


def objective(chain_metrics: Mapping[str, ChainMetrics], subchain_periods: Mapping[str, float],
              weights: MetricWeights) -> float:
    total = 0.0
    for c in set(weights.w1c) | set(weights.w2c):
        w1 = weights.w1c.get(c, 0.0)
        w2 = weights.w2c.get(c, 0.0)
        if w1 == 0 and w2 == 0:
            continue
        if c not in chain_metrics:
            raise KeyError(f"no metrics for weighted chain {c!r}")
        m = chain_metrics[c]
        total += w1 * m.latency + w2 * m.period
    for s, w in weights.w3s.items():
        if w == 0:
            continue
        if s not in subchain_periods:
            raise KeyError(f"no period for weighted subchain {s!r}")
        total += w * subchain_periods[s]
    return total


def hz_to_period_bounds(lo_hz: float, hi_hz: float) -> tuple[float, float]:
    """Throughput bounds [lo, hi] Hz -> period bounds [lo, hi] ms."""
    p_lo = 1000.0 / hi_hz if hi_hz and not math.isinf(hi_hz) else 0.0
    p_hi = 1000.0 / lo_hz if lo_hz > 0 else math.inf
    return p_lo, p_hi
