from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from depriv import synth
from depriv.model import AdjacencyGraph, Geometry
from depriv.spatial import (
    Contiguity,
    SnapGrid,
    adjacency_oracle,
    build_adjacency,
    dispersion,
    dispersion_by_region,
    read_adjacency_csv,
    write_adjacency_csv,
)


def box(geoid, x0, y0, x1, y1):
    ring = ((x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0))
    return Geometry(geoid, ((ring,),))


A, B = "260000000001", "260000000002"


@pytest.mark.parametrize(
    "other,queen,rook",
    [
        (box(B, 1, 0, 2, 1), True, True),
        (box(B, 1, 1, 2, 2), True, False),
        (box(B, 3, 3, 4, 4), False, False),
    ],
)
def test_unit_square_examples(other, queen, rook):
    geoms = {A: box(A, 0, 0, 1, 1), B: other}
    assert ((A, B) in build_adjacency(geoms).edges) is queen
    assert ((A, B) in build_adjacency(geoms, contiguity=Contiguity.ROOK).edges) is rook


def test_empty_and_single():
    assert build_adjacency({}) == adjacency_oracle({}) == AdjacencyGraph(frozenset(), frozenset())
    one = {A: box(A, 0, 0, 1, 1)}
    g = build_adjacency(one)
    assert g.nodes == {A} and g.edges == frozenset() and g == adjacency_oracle(one)


def test_snapping_absorbs_last_digit_noise():
    geoms = {A: box(A, 0, 0, 1, 1), B: box(B, 1 + 3e-9, 0, 2, 1)}
    assert (A, B) in build_adjacency(geoms).edges
    far = {A: box(A, 0, 0, 1, 1), B: box(B, 1 + 3e-6, 0, 2, 1)}
    assert build_adjacency(far).edges == frozenset()
    with pytest.raises(ValueError):
        SnapGrid(0)


def test_grid_degrees():
    g = build_adjacency(synth.grid_geometries(3, 3))
    deg = {n: len(v) for n, v in g.neighbors().items()}
    assert deg[synth.grid_geoid(1, 1)] == 8 and deg[synth.grid_geoid(0, 0)] == 3
    rook = build_adjacency(synth.grid_geometries(3, 3), contiguity="rook")
    assert len(rook.neighbors()[synth.grid_geoid(1, 1)]) == 4


@pytest.mark.parametrize("contiguity", list(Contiguity))
def test_oracle_equivalence_random(contiguity):
    rng = np.random.default_rng(2024)
    for _ in range(15):
        geoms = synth.random_planar_fixture(rng, max_polygons=120)
        fast = build_adjacency(geoms, contiguity=contiguity)
        assert fast == adjacency_oracle(geoms, contiguity=contiguity)
        assert all(a < b for a, b in fast.edges)
        assert fast == build_adjacency(geoms, contiguity=contiguity, workers=3)


def test_shared_island_links_distant_features():
    ring = ((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 0.0))
    island = ((50.0, 50.0), (51.0, 50.0), (51.0, 51.0), (50.0, 50.0))
    shifted = tuple((x + 10, y) for x, y in ring)
    geoms = {A: Geometry(A, ((ring,), (island,))), B: Geometry(B, ((shifted,), (island,)))}
    assert build_adjacency(geoms).edges == {(A, B)} == adjacency_oracle(geoms).edges


def test_adjacency_csv_round_trip(tmp_path):
    geoms = synth.grid_geometries(4, 3)
    g = build_adjacency(geoms)
    write_adjacency_csv(g, tmp_path / "adj.csv")
    lines = (tmp_path / "adj.csv").read_text().splitlines()
    assert lines[0] == "geoid_a,geoid_b" and lines[1:] == sorted(lines[1:])
    assert read_adjacency_csv(tmp_path / "adj.csv", geoms) == g


# --- dispersion ----------------------------------------------------------------


def grid3():
    geoms = synth.grid_geometries(3, 3)
    cells = {synth.grid_geoid(i, j): (i, j) for i in range(3) for j in range(3)}
    return cells, build_adjacency(geoms).neighbors()


@pytest.mark.parametrize("high_cell,expected", [((1, 1), 1.0), ((0, 0), 0.375)])
def test_grid_dispersion_against_enumeration(high_cell, expected):
    cells, nb = grid3()
    high = {g: c == high_cell for g, c in cells.items()}
    got = dispersion(list(cells), high, nb)
    oracle = oracles.dispersion_enumerated(
        list(cells.values()), {high_cell}, oracles.queen_touch_grid
    )
    assert oracle == Fraction(expected).limit_denominator()
    assert got.value == expected and got.flag is None


def test_dispersion_degenerate_flags():
    cells, nb = grid3()
    none = dispersion(list(cells), dict.fromkeys(cells, False), nb)
    assert (none.value, none.flag) == (0.0, "NO_HIGH")
    every = dispersion(list(cells), dict.fromkeys(cells, True), nb)
    assert (every.value, every.flag) == (1.0, "ALL_HIGH")
    missing = dispersion(list(cells) + ["269999999999"], dict.fromkeys(cells, False), nb)
    assert (missing.value, missing.flag) == (None, "NO_GEOMETRY")


def test_high_neighbour_outside_city():
    cells, nb = grid3()
    city = [g for g, (i, j) in cells.items() if i < 2]
    outside_high = {g: c == (2, 1) for g, c in cells.items()}
    default = dispersion(city, outside_high, nb)
    assert default.n_isolated == 3 and default.value == 0.5
    local = dispersion(city, outside_high, nb, within_city_only=True)
    assert (local.value, local.flag) == (0.0, "NO_HIGH")


def test_dispersion_by_region_uses_graph():
    cells, _ = grid3()
    g = build_adjacency(synth.grid_geometries(3, 3))
    high = {g_: c == (1, 1) for g_, c in cells.items()}
    out = dispersion_by_region({"x": list(cells)}, high, g)
    assert out["x"].value == 1.0


@st.composite
def graphs(draw):
    n = draw(st.integers(1, 12))
    nodes = [f"n{i:02d}" for i in range(n)]
    edges = draw(st.sets(st.tuples(st.sampled_from(nodes), st.sampled_from(nodes)), max_size=30))
    g = AdjacencyGraph.from_pairs(set(nodes), edges)
    high = {v: draw(st.booleans()) for v in nodes}
    members = draw(st.lists(st.sampled_from(nodes), min_size=1, unique=True))
    return g, high, members


@given(graphs(), st.booleans())
def test_dispersion_bounds(world, within):
    g, high, members = world
    r = dispersion(members, high, g.neighbors(), within)
    assert 0.0 <= r.value <= 1.0


@given(graphs(), st.lists(st.integers(0, 11), max_size=6, unique=True), st.booleans())
def test_adding_high_member_never_decreases(world, links, within):
    g, high, members = world
    before = dispersion(members, high, g.neighbors(), within).value
    nodes = sorted(g.nodes)
    new = "zz_new"
    pairs = set(g.edges) | {(nodes[k % len(nodes)], new) for k in links}
    g2 = AdjacencyGraph.from_pairs(set(g.nodes) | {new}, pairs)
    after = dispersion(members + [new], {**high, new: True}, g2.neighbors(), within).value
    assert after >= before
