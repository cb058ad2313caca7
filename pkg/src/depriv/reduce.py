"""Deterministic reductions.

Sums are computed over fixed-size leaves (exactly rounded with ``math.fsum``)
whose partial results are combined in a fixed pairwise tree. Leaf boundaries
depend only on the array length, so the result is bit-identical for any number
of workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

LEAF = 4096


def _leaf_sums(x: np.ndarray, workers: int) -> list:
    starts = range(0, x.size, LEAF)
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda s: math.fsum(x[s : s + LEAF].tolist()), starts))
    return [math.fsum(x[s : s + LEAF].tolist()) for s in starts]


def pairwise_sum(values, workers: int = 1) -> float:
    x = np.ascontiguousarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        return 0.0
    partial = _leaf_sums(x, workers)
    while len(partial) > 1:
        paired = [a + b for a, b in zip(partial[0::2], partial[1::2])]
        if len(partial) % 2:
            paired.append(partial[-1])
        partial = paired
    return partial[0]


def mean(values, workers: int = 1) -> float:
    x = np.asarray(values, dtype=np.float64)
    return pairwise_sum(x, workers) / x.size


def population_sd(values, workers: int = 1) -> float:
    """Standard deviation with the divide-by-n convention."""
    x = np.asarray(values, dtype=np.float64)
    mu = mean(x, workers)
    return math.sqrt(pairwise_sum((x - mu) ** 2, workers) / x.size)
