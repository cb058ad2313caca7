"""Adjacency + scoring over a large synthetic grid; prints timings and peak memory as JSON.

    python3 scripts/scale_benchmark.py --nx 500 --ny 500
"""

import argparse
import json
import resource
import sys
import time

import numpy as np

from depriv import index, spatial, synth
from depriv.model import BlockGroupRecord


def grid_records(nx: int, ny: int, seed: int) -> list:
    rng = np.random.default_rng(seed)
    vals = np.round(rng.uniform(0, 100, size=(nx * ny, 4)), 1).tolist()
    pops = rng.integers(0, 3000, size=nx * ny).tolist()
    out = []
    for k, (row, pop) in enumerate(zip(vals, pops)):
        i, j = divmod(k, ny)
        out.append(BlockGroupRecord(synth.grid_geoid(i, j), "26", "", *row, pop))
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nx", type=int, default=500)
    ap.add_argument("--ny", type=int, default=500)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args(argv)

    t0 = time.perf_counter()
    geoms = synth.grid_geometries(args.nx, args.ny)
    records = grid_records(args.nx, args.ny, args.seed)
    t1 = time.perf_counter()
    graph = spatial.build_adjacency(geoms, workers=args.workers)
    t2 = time.perf_counter()
    weights = index.sd_weights(index.compute_sd_stats(records, args.workers))
    raw = index.raw_scores(records, weights, args.workers)
    scores, _ = index.rescale_0_100([s for _, s in raw])
    t3 = time.perf_counter()

    # Interior cells of a queen grid have 8 neighbours: 4 edges per cell minus the boundary.
    nx, ny = args.nx, args.ny
    expected_edges = (nx - 1) * ny + nx * (ny - 1) + 2 * (nx - 1) * (ny - 1)
    result = {
        "polygons": len(geoms),
        "edges": len(graph.edges),
        "expected_edges": expected_edges,
        "scored": int(scores.size),
        "generate_s": t1 - t0,
        "adjacency_s": t2 - t1,
        "scoring_s": t3 - t2,
        "budget_s": t3 - t1,
        # Linux reports ru_maxrss in KiB.
        "peak_rss_mb": resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024,
    }
    json.dump(result, sys.stdout, indent=2)
    print()
    return 0


if __name__ == "__main__":
    sys.exit(main())
