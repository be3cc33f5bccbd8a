"""Valid subset spaces, globally normalized distributions over them, and k-best search."""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

Subset = tuple[int, ...]

PRODUCT_CAP = 10_000


@dataclass(frozen=True)
class SubsetSpace:
    universe_size: int
    min_size: int = 1
    max_size: int = 1
    contiguous_only: bool = False

    def __post_init__(self):
        if not 1 <= self.min_size <= self.max_size <= self.universe_size:
            raise ValueError(
                f"need 1 <= min_size <= max_size <= universe_size, got "
                f"{self.min_size}, {self.max_size}, {self.universe_size}"
            )

    @classmethod
    def clipped(cls, universe_size: int, min_size: int, max_size: int, contiguous_only=False):
        """Space with sizes clipped to the universe (short documents, few candidates)."""
        hi = min(max_size, universe_size)
        return cls(universe_size, min(min_size, hi), hi, contiguous_only)

    def is_valid(self, subset: Sequence[int]) -> bool:
        if not self.min_size <= len(subset) <= self.max_size:
            return False
        if any(b <= a for a, b in zip(subset, subset[1:])):
            return False
        if subset[0] < 0 or subset[-1] >= self.universe_size:
            return False
        if self.contiguous_only and subset[-1] - subset[0] != len(subset) - 1:
            return False
        return True

    def count(self) -> int:
        n = self.universe_size
        sizes = range(self.min_size, self.max_size + 1)
        if self.contiguous_only:
            return sum(n - s + 1 for s in sizes)
        return sum(math.comb(n, s) for s in sizes)


def enumerate_subsets(space: SubsetSpace) -> list[Subset]:
    """All valid subsets, ordered by size then lexicographically."""
    n = space.universe_size
    out: list[Subset] = []
    for size in range(space.min_size, space.max_size + 1):
        if space.contiguous_only:
            out.extend(tuple(range(i, i + size)) for i in range(n - size + 1))
        else:
            out.extend(itertools.combinations(range(n), size))
    return out


def log_sum_exp(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("log_sum_exp of an empty sequence")
    m = values.max()
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.exp(values - m).sum()))


def log_normalize(scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("cannot normalize an empty score vector")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    return scores - log_sum_exp(scores)


@dataclass(frozen=True)
class SetDistribution:
    space: SubsetSpace
    subsets: tuple[Subset, ...]
    log_probs: np.ndarray

    def __post_init__(self):
        if len(self.subsets) != len(self.log_probs):
            raise ValueError("subsets and log_probs differ in length")

    @classmethod
    def from_scores(cls, space: SubsetSpace, scores, subsets=None) -> "SetDistribution":
        subsets = tuple(enumerate_subsets(space) if subsets is None else subsets)
        return cls(space, subsets, log_normalize(scores))

    def __len__(self):
        return len(self.subsets)

    def log_prob(self, subset: Sequence[int]) -> float:
        return float(self.log_probs[self.subsets.index(tuple(subset))])

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)


@dataclass(frozen=True)
class Candidate:
    structure: tuple
    log_prob: float
    # position of each component in its distribution, for gradient bookkeeping
    index: tuple[int, ...] = ()


def _rank_key(c: Candidate):
    return (-c.log_prob, c.structure)


def top_k(dist: SetDistribution, k: int) -> list[Candidate]:
    """The ``min(k, len(dist))`` most probable subsets, ties broken lexicographically."""
    if k < 1:
        raise ValueError("k must be >= 1")
    cands = [Candidate(s, float(lp), (i,)) for i, (s, lp) in enumerate(zip(dist.subsets, dist.log_probs))]
    return heapq.nsmallest(k, cands, key=_rank_key)


def top_k_product(dists: Sequence[SetDistribution], k: int) -> list[Candidate]:
    """k best tuples (one subset per distribution) ranked by summed log-probability.

    Best-first search over per-distribution ranks. Each distribution is sorted
    once; a frontier of rank vectors is expanded lazily so at most
    ``k * len(dists)`` tuples are ever scored.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not dists:
        raise ValueError("need at least one distribution")
    orders = []
    for d in dists:
        if len(d) == 0:
            raise ValueError("empty distribution")
        orders.append(sorted(range(len(d)), key=lambda i, d=d: (-d.log_probs[i], d.subsets[i])))

    def make(ranks):
        idx = tuple(o[r] for o, r in zip(orders, ranks))
        lp = float(sum(d.log_probs[i] for d, i in zip(dists, idx)))
        struct = tuple(d.subsets[i] for d, i in zip(dists, idx))
        return Candidate(struct, lp, idx)

    start = (0,) * len(dists)
    first = make(start)
    frontier = [(_rank_key(first), start, first)]
    seen = {start}
    out: list[Candidate] = []
    while frontier and len(out) < k:
        _, ranks, cand = heapq.heappop(frontier)
        out.append(cand)
        for pos in range(len(ranks)):
            nxt = ranks[:pos] + (ranks[pos] + 1,) + ranks[pos + 1:]
            if nxt[pos] >= len(orders[pos]) or nxt in seen:
                continue
            seen.add(nxt)
            c = make(nxt)
            heapq.heappush(frontier, (_rank_key(c), nxt, c))
    return out


def brute_force_product(dists: Sequence[SetDistribution], k: int, cap: int = PRODUCT_CAP) -> list[Candidate]:
    """Reference for :func:`top_k_product`: enumerate the full product and sort."""
    size = math.prod(len(d) for d in dists)
    if size > cap:
        raise ValueError(f"product size {size} exceeds oracle cap {cap}")
    cands = []
    for idx in itertools.product(*(range(len(d)) for d in dists)):
        lp = float(sum(d.log_probs[i] for d, i in zip(dists, idx)))
        cands.append(Candidate(tuple(d.subsets[i] for d, i in zip(dists, idx)), lp, idx))
    cands.sort(key=_rank_key)
    return cands[:k]
