"""Online per-node compute-time tracking over a sliding window."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from . import _kernels

MIN_SPLIT_SAMPLES = 10
MIN_MODE_RATIO = 4.0
MIN_MODE_SHARE = 0.10


def nearest_rank(values: Iterable[float], pct: float) -> float:
    """Value at 1-based rank ceil(pct * n) of the ascending sort."""
    vals = sorted(values)
    if not vals:
        raise ValueError("empty window")
    k = max(1, math.ceil(pct * len(vals) - 1e-12))
    return vals[k - 1]


@dataclass(frozen=True)
class ModeSplit:
    modes: tuple[tuple[float, ...], ...]  # each mode's samples, ascending
    threshold: float | None = None

    @property
    def count(self) -> int:
        return len(self.modes)

    def shares(self) -> list[float]:
        n = sum(len(m) for m in self.modes)
        return [len(m) / n for m in self.modes]


def classify_modes(window: Iterable[float], min_samples: int = MIN_SPLIT_SAMPLES,
                   min_ratio: float = MIN_MODE_RATIO, min_share: float = MIN_MODE_SHARE) -> ModeSplit:
    """Split a window into one or two modes.

    Two modes only when the variance-minimising threshold separates clusters
    whose means differ by ``min_ratio`` and each holds ``min_share`` of samples.
    """
    x = np.sort(np.asarray(list(window), dtype=np.float64))
    if x.size == 0:
        return ModeSplit(())
    one = ModeSplit((tuple(x.tolist()),))
    if x.size < min_samples:
        return one
    s, _ = _kernels.best_split(x)
    if s <= 0 or s >= x.size:
        return one
    lo, hi = x[:s], x[s:]
    if min(lo.size, hi.size) < min_share * x.size:
        return one
    if hi.mean() < min_ratio * lo.mean():
        return one
    return ModeSplit((tuple(lo.tolist()), tuple(hi.tolist())), threshold=float((lo[-1] + hi[0]) / 2))


@dataclass
class NodeStats:
    window: int = 50
    samples: deque = field(default_factory=deque)
    last_time: float | None = None

    def __post_init__(self):
        self.samples = deque(self.samples, maxlen=self.window)


class Estimator:
    """Sliding-window tail estimates per node plus observed output periods per subchain."""

    def __init__(self, window: int = 50, percentile: float = 0.95, bootstrap_ms: float = 5.0,
                 rate_percentile: float = 0.75, multimodal: bool = True):
        self.window = window
        self.percentile = percentile
        self.bootstrap_ms = bootstrap_ms
        self.rate_percentile = rate_percentile
        self.multimodal = multimodal
        self.nodes: dict[str, NodeStats] = {}
        self.outputs: dict[str, deque] = {}
        self._last_output: dict[str, float] = {}

    def record(self, node: str, duration: float, timestamp: float = 0.0) -> NodeStats:
        if not duration > 0:
            raise ValueError(f"non-positive duration {duration!r} for {node}")
        st = self.nodes.get(node)
        if st is None:
            st = self.nodes[node] = NodeStats(self.window)
        st.samples.append(float(duration))
        st.last_time = timestamp
        return st

    def record_output(self, subchain: str, t_ms: float) -> None:
        last = self._last_output.get(subchain)
        if last is not None and t_ms > last:
            self.outputs.setdefault(subchain, deque(maxlen=self.window)).append(t_ms - last)
        self._last_output[subchain] = t_ms

    def estimate(self, node: str) -> float:
        st = self.nodes.get(node)
        if st is None or not st.samples:
            return self.bootstrap_ms
        return window_estimate(st.samples, self.percentile, self.multimodal)

    def modes(self, node: str) -> ModeSplit:
        st = self.nodes.get(node)
        return classify_modes(st.samples if st else ())

    def observed_period(self, subchain: str) -> float | None:
        gaps = self.outputs.get(subchain)
        if not gaps:
            return None
        return nearest_rank(gaps, self.rate_percentile)

    def snapshot(self, node_ids: Iterable[str] | None = None) -> dict[str, float]:
        ids = list(node_ids) if node_ids is not None else list(self.nodes)
        return {n: self.estimate(n) for n in ids}

    def observed_periods(self, subchains: Iterable[str]) -> dict[str, float]:
        out = {}
        for s in subchains:
            p = self.observed_period(s)
            if p is not None:
                out[s] = p
        return out

    def load(self, samples: Mapping[str, Iterable[float]]) -> None:
        for n, vals in samples.items():
            for v in vals:
                self.record(n, v)


def window_estimate(samples: Iterable[float], percentile: float = 0.95, multimodal: bool = True) -> float:
    """Tail estimate; for two modes, the share-weighted sum of per-mode tails."""
    vals = list(samples)
    if not multimodal:
        return nearest_rank(vals, percentile)
    split = classify_modes(vals)
    if split.count <= 1:
        return nearest_rank(vals, percentile)
    return sum(share * nearest_rank(m, percentile) for share, m in zip(split.shares(), split.modes))
