"""Polygon contiguity graphs and the dispersion score.

Two block groups are neighbours when their boundaries share a vertex (queen)
or a whole edge segment (rook) after every coordinate is snapped to a grid.
Construction sorts snapped vertex keys instead of comparing polygon pairs, so
it scales linearly-ish with the number of vertices.
"""

from __future__ import annotations

import csv
import enum
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .model import AdjacencyGraph, Geometry


class Contiguity(str, enum.Enum):
    QUEEN = "queen"
    ROOK = "rook"


@dataclass(frozen=True)
class SnapGrid:
    precision: float = 1e-7

    def __post_init__(self):
        if not self.precision > 0:
            raise ValueError(f"snap precision must be positive, got {self.precision}")


def _shard_arrays(items, precision, contiguity):
    """Snapped keys for one shard: ``(node_ids, key_columns)``."""
    nodes, xs, ys, ring_ids = [], [], [], []
    ring = 0
    for node, geom in items:
        for polygon in geom.polygons:
            for r in polygon:
                for x, y in r:
                    xs.append(x)
                    ys.append(y)
                nodes.extend([node] * len(r))
                ring_ids.extend([ring] * len(r))
                ring += 1
    node_arr = np.array(nodes, dtype=np.int64)
    kx = np.rint(np.array(xs, dtype=np.float64) / precision).astype(np.int64)
    ky = np.rint(np.array(ys, dtype=np.float64) / precision).astype(np.int64)
    if contiguity is Contiguity.QUEEN:
        return node_arr, (kx, ky)
    ring_arr = np.array(ring_ids, dtype=np.int64)
    # Consecutive vertices within the same ring form a segment.
    same = ring_arr[1:] == ring_arr[:-1]
    ax, ay, bx, by = kx[:-1][same], ky[:-1][same], kx[1:][same], ky[1:][same]
    seg_node = node_arr[:-1][same]
    swap = (bx < ax) | ((bx == ax) & (by < ay))
    ax2, ay2 = np.where(swap, bx, ax), np.where(swap, by, ay)
    bx2, by2 = np.where(swap, ax, bx), np.where(swap, ay, by)
    keep = (ax2 != bx2) | (ay2 != by2)
    return seg_node[keep], (ax2[keep], ay2[keep], bx2[keep], by2[keep])


def _pairs_from_groups(node: np.ndarray, keys: tuple) -> np.ndarray:
    """All node pairs sharing a key, as an (m, 2) array with a < b."""
    if node.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    order = np.lexsort((node,) + tuple(reversed(keys)))
    node = node[order]
    keys = tuple(k[order] for k in keys)
    key_change = np.zeros(node.size, dtype=bool)
    key_change[0] = True
    for k in keys:
        key_change[1:] |= k[1:] != k[:-1]
    # Drop repeated (key, node) entries, e.g. a ring's closing vertex.
    dup = np.zeros(node.size, dtype=bool)
    dup[1:] = ~key_change[1:] & (node[1:] == node[:-1])
    node, key_change = node[~dup], key_change[~dup]
    starts = np.flatnonzero(key_change)
    sizes = np.diff(np.append(starts, node.size))
    chunks = []
    for s in np.unique(sizes[sizes > 1]):
        members = node[starts[sizes == s][:, None] + np.arange(s)]
        for i, j in itertools.combinations(range(int(s)), 2):
            chunks.append(np.stack([members[:, i], members[:, j]], axis=1))
    if not chunks:
        return np.empty((0, 2), dtype=np.int64)
    pairs = np.concatenate(chunks)
    pairs.sort(axis=1)
    return np.unique(pairs, axis=0)


def build_adjacency(
    geometries: Mapping[str, Geometry],
    snap: SnapGrid = SnapGrid(),
    contiguity: Contiguity = Contiguity.QUEEN,
    workers: int = 1,
) -> AdjacencyGraph:
    contiguity = Contiguity(contiguity)
    names = sorted(geometries)
    items = [(i, geometries[g]) for i, g in enumerate(names)]
    shard = max(1, -(-len(items) // max(workers, 1)))
    shards = [items[s : s + shard] for s in range(0, len(items), shard)] or [[]]
    if workers > 1 and len(shards) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda it: _shard_arrays(it, snap.precision, contiguity), shards))
    else:
        parts = [_shard_arrays(it, snap.precision, contiguity) for it in shards]
    node = np.concatenate([p[0] for p in parts])
    keys = tuple(np.concatenate([p[1][k] for p in parts]) for k in range(len(parts[0][1])))
    pairs = _pairs_from_groups(node, keys)
    return AdjacencyGraph(frozenset(names), frozenset((names[a], names[b]) for a, b in pairs.tolist()))


def adjacency_oracle(
    geometries: Mapping[str, Geometry],
    snap: SnapGrid = SnapGrid(),
    contiguity: Contiguity = Contiguity.QUEEN,
) -> AdjacencyGraph:
    """Brute-force all-pairs comparison; meant for a few hundred polygons at most."""
    contiguity = Contiguity(contiguity)
    p = snap.precision

    def snapped(pt):
        return (round(pt[0] / p), round(pt[1] / p))

    features = {}
    for g, geom in geometries.items():
        if contiguity is Contiguity.QUEEN:
            features[g] = {snapped(pt) for pt in geom.vertices()}
        else:
            segs = set()
            for polygon in geom.polygons:
                for ring in polygon:
                    for a, b in zip(ring[:-1], ring[1:]):
                        sa, sb = snapped(a), snapped(b)
                        if sa != sb:
                            segs.add(frozenset((sa, sb)))
            features[g] = segs
    names = sorted(features)
    edges = set()
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            if features[a] & features[b]:
                edges.add((a, b))
    return AdjacencyGraph(frozenset(names), frozenset(edges))


def write_adjacency_csv(graph: AdjacencyGraph, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["geoid_a", "geoid_b"])
        w.writerows(graph.sorted_edges())


def read_adjacency_csv(path, nodes=()) -> AdjacencyGraph:
    with open(path, encoding="utf-8", newline="") as fh:
        pairs = [(row["geoid_a"], row["geoid_b"]) for row in csv.DictReader(fh)]
    all_nodes = set(nodes) | {g for e in pairs for g in e}
    return AdjacencyGraph.from_pairs(all_nodes, pairs)


@dataclass(frozen=True)
class DispersionResult:
    value: Optional[float]
    flag: Optional[str]
    n_low: int
    n_isolated: int


def dispersion(
    members: Sequence[str],
    high: Mapping[str, bool],
    neighbors: Mapping[str, set],
    within_city_only: bool = False,
) -> DispersionResult:
    """One minus the share of low-deprivation members with no high neighbour.

    ``neighbors`` must cover every member; a member missing from it has no
    geometry and makes the score unavailable (flag ``NO_GEOMETRY``). By default
    a high neighbour may lie outside the region.
    """
    members = list(members)
    if not members:
        raise ValueError("dispersion needs at least one member")
    if any(m not in neighbors for m in members):
        return DispersionResult(None, "NO_GEOMETRY", 0, 0)
    member_set = set(members)
    low = [m for m in members if not high.get(m, False)]
    if not low:
        return DispersionResult(1.0, "ALL_HIGH", 0, 0)

    def counts(nb):
        return (not within_city_only or nb in member_set) and high.get(nb, False)

    isolated = sum(1 for m in low if not any(counts(nb) for nb in neighbors[m]))
    scope_high = any(high.get(m, False) for m in members) or (
        not within_city_only and any(high.get(nb, False) for m in members for nb in neighbors[m])
    )
    if not scope_high:
        return DispersionResult(0.0, "NO_HIGH", len(low), isolated)
    return DispersionResult(1.0 - isolated / len(low), None, len(low), isolated)


def dispersion_by_region(
    regions: Mapping[str, Sequence[str]],
    high: Mapping[str, bool],
    graph: AdjacencyGraph,
    within_city_only: bool = False,
) -> dict:
    neighbors = graph.neighbors()
    return {rid: dispersion(m, high, neighbors, within_city_only) for rid, m in sorted(regions.items())}
