"""Synthetic block groups on a regular lon/lat grid, for tests and benchmarks."""

from __future__ import annotations

import csv
import json

import numpy as np

from .model import BlockGroupRecord, Geometry

ORIGIN = (-83.30, 42.20)
CELL = 0.01

CSV_HEADER = [
    "geoid", "state_fips", "place_id", "percpov", "percvac", "unemp", "nohs",
    "population", "popdens", "percblk", "percwht",
]


def square(i: int, j: int, cell: float = CELL, origin=ORIGIN) -> tuple:
    """Closed ring of grid cell (i, j); shared corners are bit-identical floats."""
    x0, y0 = origin[0] + i * cell, origin[1] + j * cell
    x1, y1 = origin[0] + (i + 1) * cell, origin[1] + (j + 1) * cell
    return ((x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0))


def grid_geoid(i: int, j: int, state: str = "26") -> str:
    return f"{state}{i // 1000:03d}{i % 1000:03d}{j:03d}1"


def grid_geometries(nx: int, ny: int, state: str = "26", cell: float = CELL) -> dict:
    out = {}
    for i in range(nx):
        for j in range(ny):
            g = grid_geoid(i, j, state)
            out[g] = Geometry(g, ((square(i, j, cell),),))
    return out


def random_planar_fixture(rng: np.random.Generator, max_polygons: int = 200, precision: float = 1e-7) -> dict:
    """Random subset of a grid with sub-precision vertex noise, holes and multipolygons."""
    nx = int(rng.integers(1, 16))
    ny = int(rng.integers(1, max(2, max_polygons // nx)))
    keep = rng.random((nx, ny)) < rng.uniform(0.4, 1.0)
    out = {}

    def jitter(ring):
        noise = rng.uniform(-0.2, 0.2, size=(len(ring) - 1, 2)) * precision
        pts = [(x + dx, y + dy) for (x, y), (dx, dy) in zip(ring[:-1], noise)]
        return tuple(pts + [pts[0]])

    for i in range(nx):
        for j in range(ny):
            if not keep[i, j] or len(out) >= max_polygons:
                continue
            g = grid_geoid(i, j)
            outer = jitter(square(i, j))
            polys = [(outer,)]
            r = rng.random()
            if r < 0.1:
                cx, cy = ORIGIN[0] + (i + 0.5) * CELL, ORIGIN[1] + (j + 0.5) * CELL
                h = CELL / 8
                hole = ((cx - h, cy - h), (cx - h, cy + h), (cx + h, cy + h), (cx + h, cy - h), (cx - h, cy - h))
                polys = [(outer, hole)]
            elif r < 0.2:
                # A detached island far from the grid, occasionally shared by two features.
                k = int(rng.integers(0, 5))
                polys.append((square(100 + k, 100),))
            out[g] = Geometry(g, tuple(polys))
    return out


def fixture_records(seed: int = 20240101, nx: int = 20, ny: int = 10) -> list:
    """Two states side by side, 5x5-cell places, one strongly deprived benchmark place.

    The benchmark block (cells i < 5, j < 5 in state 26) carries place id 2622000.
    The top row of cells has no place.
    """
    rng = np.random.default_rng(seed)
    records = []
    for i in range(nx):
        for j in range(ny):
            state = "26" if i < nx // 2 else "39"
            if j == ny - 1:
                place = ""
            elif i < 5 and j < 5:
                place = "2622000"
            else:
                place = f"{state}{(i // 5) * 10 + j // 5 + 10:05d}"
            bump = 25.0 if place == "2622000" else 0.0
            pov, vac, une, nohs = (
                min(100.0, float(rng.uniform(0, 40)) + bump),
                min(100.0, float(rng.uniform(0, 30)) + bump / 2),
                min(100.0, float(rng.uniform(0, 15)) + bump / 3),
                min(100.0, float(rng.uniform(0, 30)) + bump / 2),
            )
            pop = 0 if (i * ny + j) % 67 == 5 else int(rng.integers(300, 3000))
            blk = float(rng.uniform(0, 100))
            wht = float(rng.uniform(0, 100 - blk))
            records.append(
                BlockGroupRecord(
                    geoid=grid_geoid(i, j, state),
                    state_fips=state,
                    place_id=place,
                    percpov=round(pov, 1),
                    percvac=round(vac, 1),
                    unemp=round(une, 1),
                    nohs=round(nohs, 1),
                    population=pop,
                    popdens=round(float(rng.uniform(200, 9000)), 1),
                    percblk=round(blk, 1),
                    percwht=round(wht, 1),
                )
            )
    return records


def fixture_geometries(records) -> dict:
    out = {}
    for r in records:
        i, j = int(r.geoid[2:8]), int(r.geoid[8:11])
        out[r.geoid] = Geometry(r.geoid, ((square(i, j),),))
    return out


def _cell(v):
    return "" if v is None else repr(v)


def write_csv(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow([r.geoid, r.state_fips, r.place_id] + [_cell(getattr(r, c)) for c in CSV_HEADER[3:]])


def write_geojson(geometries, path, id_property: str = "GEOID") -> None:
    feats = []
    for g in sorted(geometries):
        polys = [[[list(pt) for pt in ring] for ring in poly] for poly in geometries[g].polygons]
        geom = {"type": "Polygon", "coordinates": polys[0]} if len(polys) == 1 else {
            "type": "MultiPolygon", "coordinates": polys}
        feats.append({"type": "Feature", "properties": {id_property: g}, "geometry": geom})
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"type": "FeatureCollection", "features": feats}, fh)
