import math
import statistics

import pytest
from hypothesis import given
from hypothesis import strategies as st

from depriv.aggregate import (
    Group,
    SweepDirection,
    ThresholdSpec,
    classify_high,
    count_high,
    cumulative_group_sweep,
    histogram,
    pct_high_by_region,
    read_region_csv,
    region_median,
    resolve_threshold,
    summary_stats,
    write_region_csv,
)
from depriv.errors import ConfigError, EmptyInputError, RegionError
from depriv.model import BlockGroupRecord, RegionKind, ScoredBlockGroup


def rec(i, place="", state="26", pop=100, blk=None, wht=None, pov=10.0, popdens=None):
    return BlockGroupRecord(f"{state}{i:010d}", state, place, pov, 1, 1, 1, pop, popdens, blk, wht)


def scored(records, scores):
    return [ScoredBlockGroup(r.geoid, s, s) for r, s in zip(records, scores)]


# --- medians and thresholds --------------------------------------------------


@pytest.mark.parametrize("vals,expected", [([1, 5, 9], 5), ([1, 5, 9, 11], 7), ([26.413], 26.413)])
def test_region_median_examples(vals, expected):
    assert region_median(vals) == expected


def test_region_median_empty():
    with pytest.raises(RegionError, match="EMPTY_REGION|empty"):
        region_median([])


values = st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=40)


@given(values, st.randoms())
def test_median_permutation_invariant(xs, rnd):
    ys = list(xs)
    rnd.shuffle(ys)
    assert region_median(ys) == region_median(xs)
    assert region_median(xs) == pytest.approx(statistics.median(xs), rel=1e-12, abs=1e-9)


@given(values.filter(lambda xs: len(xs) % 2 == 1), st.floats(0, 1e6), st.floats(0, 1e6))
def test_median_straddling_pair(xs, up, down):
    m = region_median(xs)
    assert region_median(xs + [max(xs) + up, min(xs) - down]) == m


def test_threshold_spec_parse_round_trip():
    for text in ("region:2622000", "value:26.413", "value:-1.0"):
        assert str(ThresholdSpec.parse(text)) == text
    with pytest.raises(ConfigError):
        ThresholdSpec.parse("median:detroit")


def test_resolve_threshold_examples():
    rs = [rec(i, "2622000") for i in range(3)] + [rec(3, "2600001"), rec(4, "")]
    sc = scored(rs, [10, 20, 30, 99, 99])
    assert resolve_threshold(ThresholdSpec.parse("value:26.413"), sc, rs) == 26.413
    assert resolve_threshold(ThresholdSpec.parse("region:2622000"), sc, rs) == 20
    with pytest.raises(RegionError) as exc:
        resolve_threshold(ThresholdSpec.parse("region:9999999"), sc, rs)
    assert exc.value.code == "UNKNOWN_REGION" and exc.value.exit_code == 9
    with pytest.raises(RegionError, match="empty"):
        resolve_threshold(ThresholdSpec.parse("region:2622000"), [], rs)


def test_classify_strict_inequality():
    sc = [ScoredBlockGroup("a" * 12, 0, 26.413), ScoredBlockGroup("b" * 12, 0, 26.414)]
    assert [s.high_deprivation for s in classify_high(sc, 26.413)] == [False, True]
    zeros = [ScoredBlockGroup(str(i) * 12, 0, 0.0) for i in range(5)]
    assert count_high(classify_high(zeros, 0.0)) == 0


# --- region summaries --------------------------------------------------------


def test_pct_high_examples():
    rs = [rec(i, "2600001") for i in range(4)] + [rec(i, "2600002") for i in range(4, 7)]
    cl = classify_high(scored(rs, [50, 1, 2, 3, 1, 2, 3]), 10)
    out = pct_high_by_region(rs, cl, RegionKind.PLACE)
    assert [(s.region_id, s.pct_high, s.n_high, s.n_bg) for s in out] == [("2600001", 25.0, 1, 4), ("2600002", 0.0, 0, 3)]


def test_covariates_population_weighted_and_overrides():
    rs = [rec(0, "2600001", pop=100, pov=10, popdens=1000), rec(1, "2600001", pop=300, pov=30, popdens=None)]
    cl = classify_high(scored(rs, [1, 2]), 5)
    (s,) = pct_high_by_region(rs, cl, RegionKind.PLACE)
    assert s.percpov == 25.0 and s.popdens == 1000.0 and s.percblk is None and s.population == 400
    (o,) = pct_high_by_region(rs, cl, RegionKind.PLACE, overrides={"2600001": {"percpov": 12.5, "population": 7}})
    assert o.percpov == 12.5 and o.population == 7


def test_suspect_complete_flag():
    rs = [rec(0, "2600001"), rec(1, "2600001"), rec(2, "2600002")]
    out = pct_high_by_region(rs, classify_high(scored(rs, [9, 9, 1]), 5), RegionKind.PLACE)
    assert {s.region_id: s.suspect_complete for s in out} == {"2600001": True, "2600002": False}


@st.composite
def classified_world(draw):
    n = draw(st.integers(1, 40))
    rs = [
        rec(i, draw(st.sampled_from(["", "2600001", "2600002", "3900001"])), state=draw(st.sampled_from(["26", "39"])))
        for i in range(n)
    ]
    scores = [draw(st.floats(0, 100)) for _ in range(n)]
    return rs, scored(rs, scores)


@given(classified_world(), st.floats(-1, 101), st.floats(0, 50))
def test_threshold_monotonicity(world, t, dt):
    rs, sc = world
    lo = {s.region_id: s.pct_high for s in pct_high_by_region(rs, classify_high(sc, t), RegionKind.PLACE)}
    hi = {s.region_id: s.pct_high for s in pct_high_by_region(rs, classify_high(sc, t + dt), RegionKind.PLACE)}
    assert all(hi[k] <= lo[k] for k in lo)


@given(classified_world(), st.floats(0, 100))
def test_partition_conservation_and_sorting(world, t):
    rs, sc = world
    cl = classify_high(sc, t)
    national = count_high(cl)
    states = pct_high_by_region(rs, cl, RegionKind.STATE)
    places = pct_high_by_region(rs, cl, RegionKind.PLACE)
    assert sum(s.n_high for s in states) == national
    by = {s.geoid: s for s in cl}
    assert sum(s.n_high for s in places) == sum(by[r.geoid].high_deprivation for r in rs if r.place_id)
    for out in (states, places):
        assert all(a.pct_high >= b.pct_high for a, b in zip(out, out[1:]))


def test_region_csv_round_trip(tmp_path):
    rs = [rec(i, "2600001", pov=10 + i, popdens=100.0) for i in range(3)] + [rec(5, "2600002")]
    out = pct_high_by_region(rs, classify_high(scored(rs, [50, 1, 20, 3]), 10), RegionKind.PLACE, dispersion={"2600001": 0.5})
    path = tmp_path / "r.csv"
    write_region_csv(out, path)
    text = path.read_text().splitlines()
    assert text[0] == "region_id,region_kind,n_bg,median_score,pct_high,dispersion,percpov,popdens,percblk,percwht,population"
    assert text[1] == "2600001,Place,3,20.000,66.667,0.500,11.000,100.000,,,300"
    back = read_region_csv(path)
    assert [(s.region_id, s.n_high, s.dispersion) for s in back] == [("2600001", 2, 0.5), ("2600002", 0, None)]


# --- summaries, histogram, sweep --------------------------------------------


def test_summary_stats_examples():
    s = summary_stats([0, 10, 20])
    assert (s.min, s.mean, s.median, s.max) == (0, 10, 10, 20)
    assert s.sd == pytest.approx(math.sqrt(200 / 3)) and round(s.sd, 4) == 8.165
    one = summary_stats([7])
    assert (one.min, one.mean, one.median, one.max, one.sd) == (7, 7, 7, 7, 0)
    with pytest.raises(EmptyInputError):
        summary_stats([])


def test_histogram_examples():
    assert histogram([0, 0.5, 1.5], 1) == [(0, 2), (1, 1)]
    assert histogram([], 1) == []
    assert histogram([100], 10) == [(100, 1)]
    assert histogram([0, 2.5], 1) == [(0, 1), (1, 0), (2, 1)]


@given(st.lists(st.floats(0, 100), max_size=50), st.sampled_from([0.5, 1.0, 2.5, 10.0]))
def test_histogram_conserves_count(xs, w):
    bins = histogram(xs, w)
    assert sum(c for _, c in bins) == len(xs)
    for x in xs:
        assert any(lo <= x < lo + w for lo, c in bins if c)


def test_sweep_constant_composition():
    rs = [rec(i, blk=100.0, pop=10) for i in range(5)]
    scores = {r.geoid: float(i) for i, r in enumerate(rs)}
    pts = cumulative_group_sweep(rs, scores, Group.BLACK)
    assert [p.t for p in pts] == [10.0 * k for k in range(1, 11)]
    assert all(p.median == 2.0 and p.pop_share == 1.0 for p in pts)


def test_sweep_two_compositions():
    rs = [rec(i, wht=0.0) for i in range(3)] + [rec(i, wht=100.0) for i in range(3, 5)]
    scores = {r.geoid: (20.0 if r.percwht == 0 else 5.0) for r in rs}
    pts = cumulative_group_sweep(rs, scores, Group.WHITE)
    assert all(p.median == 5.0 and p.n == 2 for p in pts[:-1])
    assert pts[-1].median == 20.0 and pts[-1].n == 5
    assert pts[-1].median == summary_stats(list(scores.values())).median
    dil = cumulative_group_sweep(rs, scores, Group.WHITE, direction=SweepDirection.DILUTING)
    assert dil[0].median == 20.0 and dil[0].n == 3 and dil[-1].n == 5


def test_sweep_empty_subset_and_bad_step():
    rs = [rec(0, blk=50.0)]
    pts = cumulative_group_sweep(rs, {rs[0].geoid: 1.0}, Group.BLACK, step=25)
    assert pts[0].median is None and pts[0].n == 0 and pts[-1].median == 1.0
    with pytest.raises(ConfigError):
        cumulative_group_sweep(rs, {}, Group.BLACK, step=7)
