"""High-deprivation classification and regional aggregation."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from . import reduce
from .errors import ConfigError, EmptyInputError, RegionError
from .model import BlockGroupRecord, RegionKind, RegionSummary, ScoredBlockGroup


class ThresholdMode(str, enum.Enum):
    BENCHMARK_REGION_MEDIAN = "BenchmarkRegionMedian"
    EXPLICIT_VALUE = "ExplicitValue"


@dataclass(frozen=True)
class ThresholdSpec:
    mode: ThresholdMode
    region_id: Optional[str] = None
    value: Optional[float] = None

    def __post_init__(self):
        if self.mode is ThresholdMode.BENCHMARK_REGION_MEDIAN:
            ok = self.region_id is not None and self.value is None
        else:
            ok = self.value is not None and self.region_id is None
        if not ok:
            raise ConfigError("BAD_THRESHOLD", f"inconsistent threshold spec {self}")

    @classmethod
    def parse(cls, text: str) -> "ThresholdSpec":
        """``region:<id>`` or ``value:<x>``."""
        kind, _, arg = str(text).partition(":")
        if kind == "region" and arg:
            return cls(ThresholdMode.BENCHMARK_REGION_MEDIAN, region_id=arg)
        if kind == "value":
            try:
                return cls(ThresholdMode.EXPLICIT_VALUE, value=float(arg))
            except ValueError:
                pass
        raise ConfigError("BAD_THRESHOLD", f"expected region:<id> or value:<x>, got {text!r}")

    def __str__(self):
        if self.mode is ThresholdMode.EXPLICIT_VALUE:
            return f"value:{self.value!r}"
        return f"region:{self.region_id}"


def region_median(values: Iterable[float]) -> float:
    s = sorted(values)
    n = len(s)
    if n == 0:
        raise RegionError("EMPTY_REGION", "median of an empty region")
    mid = n // 2
    if n % 2:
        return float(s[mid])
    return (s[mid - 1] + s[mid]) / 2.0


def region_members(records: Sequence[BlockGroupRecord], region_id: str) -> list:
    """Geoids whose place_id matches; a two-digit id falls back to state FIPS."""
    members = [r.geoid for r in records if r.place_id == region_id]
    if not members and len(region_id) == 2:
        members = [r.geoid for r in records if r.state_fips == region_id]
    return members


def resolve_threshold(
    spec: ThresholdSpec,
    scored: Sequence[ScoredBlockGroup],
    records: Sequence[BlockGroupRecord] = (),
) -> float:
    if spec.mode is ThresholdMode.EXPLICIT_VALUE:
        return float(spec.value)
    known_places = {r.place_id for r in records} | {r.state_fips for r in records}
    if spec.region_id not in known_places:
        raise RegionError("UNKNOWN_REGION", f"benchmark region {spec.region_id!r} not in dataset")
    scores = {s.geoid: s.score for s in scored}
    return region_median(scores[g] for g in region_members(records, spec.region_id) if g in scores)


def classify_high(scored: Sequence[ScoredBlockGroup], threshold: float) -> list:
    """Flag scores strictly above the threshold."""
    return [replace(s, high_deprivation=bool(s.score > threshold)) for s in scored]


def count_high(classified: Sequence[ScoredBlockGroup]) -> int:
    return sum(1 for s in classified if s.high_deprivation)


def _weighted_mean(pairs) -> Optional[float]:
    pairs = [(v, w) for v, w in pairs if v is not None]
    total = sum(w for _, w in pairs)
    if not pairs or total <= 0:
        return None
    return reduce.pairwise_sum([v * w for v, w in pairs]) / reduce.pairwise_sum([w for _, w in pairs])


def region_key(kind: RegionKind) -> Callable[[BlockGroupRecord], str]:
    if kind is RegionKind.STATE:
        return lambda r: r.state_fips
    return lambda r: r.place_id


def pct_high_by_region(
    records: Sequence[BlockGroupRecord],
    classified: Sequence[ScoredBlockGroup],
    region_kind: RegionKind,
    overrides: Optional[Mapping[str, dict]] = None,
    dispersion: Optional[Mapping[str, Optional[float]]] = None,
    membership: Optional[Mapping[str, str]] = None,
) -> list:
    """One RegionSummary per region, sorted by pct_high desc then region_id.

    Covariates are population-weighted block-group means unless ``overrides``
    supplies place-level figures. ``membership`` (geoid -> region id) replaces
    the default key for custom city definitions. Block groups without a place
    are skipped for place aggregation.
    """
    by_geoid = {s.geoid: s for s in classified}
    key = (lambda r: membership.get(r.geoid, "")) if membership is not None else region_key(region_kind)
    groups: dict = {}
    for r in records:
        k = key(r)
        if k and r.geoid in by_geoid:
            groups.setdefault(k, []).append(r)
    out = []
    for rid, recs in groups.items():
        scores = [by_geoid[r.geoid] for r in recs]
        n_high = count_high(scores)
        pops = [r.population for r in recs]
        cov = {
            name: _weighted_mean((getattr(r, name), r.population) for r in recs)
            for name in ("percpov", "popdens", "percblk", "percwht")
        }
        population = int(sum(pops))
        if overrides and rid in overrides:
            ov = overrides[rid]
            for name in cov:
                if ov.get(name) is not None:
                    cov[name] = ov[name]
            if ov.get("population") is not None:
                population = int(ov["population"])
        disp = None
        if dispersion is not None and region_kind is not RegionKind.STATE:
            disp = dispersion.get(rid)
        out.append(
            RegionSummary(
                region_id=rid,
                region_kind=region_kind,
                n_bg=len(recs),
                median_score=region_median(s.score for s in scores),
                pct_high=100.0 * n_high / len(recs),
                n_high=n_high,
                dispersion=disp,
                population=population,
                suspect_complete=region_kind is not RegionKind.STATE and n_high == len(recs),
                **cov,
            )
        )
    out.sort(key=lambda s: (-s.pct_high, s.region_id))
    return out


REGION_CSV_HEADER = (
    "region_id,region_kind,n_bg,median_score,pct_high,dispersion,"
    "percpov,popdens,percblk,percwht,population"
).split(",")


def _fmt(v) -> str:
    return "" if v is None else f"{v:.3f}"


def write_region_csv(summaries: Sequence[RegionSummary], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REGION_CSV_HEADER)
        for s in summaries:
            w.writerow(
                [
                    s.region_id,
                    s.region_kind.value,
                    s.n_bg,
                    _fmt(s.median_score),
                    _fmt(s.pct_high),
                    _fmt(s.dispersion),
                    _fmt(s.percpov),
                    _fmt(s.popdens),
                    _fmt(s.percblk),
                    _fmt(s.percwht),
                    s.population,
                ]
            )


def read_region_csv(path) -> list:
    def opt(text):
        return float(text) if text != "" else None

    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            n_bg = int(row["n_bg"])
            n_high = round(float(row["pct_high"]) * n_bg / 100.0)
            out.append(
                RegionSummary(
                    region_id=row["region_id"],
                    region_kind=RegionKind(row["region_kind"]),
                    n_bg=n_bg,
                    median_score=float(row["median_score"]),
                    pct_high=100.0 * n_high / n_bg,
                    n_high=n_high,
                    dispersion=opt(row["dispersion"]),
                    percpov=opt(row["percpov"]),
                    popdens=opt(row["popdens"]),
                    percblk=opt(row["percblk"]),
                    percwht=opt(row["percwht"]),
                    population=int(row["population"]),
                    suspect_complete=RegionKind(row["region_kind"]) is not RegionKind.STATE and n_high == n_bg,
                )
            )
    return out


@dataclass(frozen=True)
class SummaryStats:
    n: int
    min: float
    mean: float
    median: float
    max: float
    sd: float


def summary_stats(scores, mask=None) -> SummaryStats:
    s = np.asarray(scores, dtype=np.float64)
    if mask is not None:
        s = s[np.asarray(mask, dtype=bool)]
    if s.size == 0:
        raise EmptyInputError("EMPTY_INPUT", "summary statistics of an empty group")
    return SummaryStats(
        n=int(s.size),
        min=float(s.min()),
        mean=reduce.mean(s),
        median=region_median(s.tolist()),
        max=float(s.max()),
        sd=reduce.population_sd(s),
    )


def histogram(scores, bin_width: float) -> list:
    """``[(lower_edge, count)]`` over half-open bins ``[k*w, (k+1)*w)``.

    Bins run contiguously from the lowest to the highest occupied bin, so
    interior empty bins appear with count 0.
    """
    if not bin_width > 0:
        raise ConfigError("BAD_BIN_WIDTH", f"bin width must be positive, got {bin_width}")
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        return []
    idx = np.floor(s / bin_width).astype(np.int64)
    lo, hi = int(idx.min()), int(idx.max())
    counts = np.bincount(idx - lo, minlength=hi - lo + 1)
    return [((lo + k) * bin_width, int(c)) for k, c in enumerate(counts)]


class Group(str, enum.Enum):
    BLACK = "Black"
    WHITE = "White"


class SweepDirection(str, enum.Enum):
    # Subset = share >= 100 - t: small t keeps only the most group-concentrated areas.
    CONCENTRATING = "concentrating"
    # Subset = share <= t: small t keeps areas with the least of the group.
    DILUTING = "diluting"


@dataclass(frozen=True)
class SweepPoint:
    t: float
    n: int
    median: Optional[float]
    sd: Optional[float]
    pop_share: float


def cumulative_group_sweep(
    records: Sequence[BlockGroupRecord],
    scores: Mapping[str, float],
    group: Group,
    step: float = 10.0,
    direction: SweepDirection = SweepDirection.CONCENTRATING,
) -> list:
    """Median/SD of scores over nested subsets selected by racial share.

    Records without the group share are left out of every subset.
    """
    n_steps = 100.0 / step
    if step <= 0 or n_steps != int(n_steps):
        raise ConfigError("BAD_STEP", f"step must divide 100, got {step}")
    attr = "percblk" if Group(group) is Group.BLACK else "percwht"
    rows = [(getattr(r, attr), scores[r.geoid], r.population) for r in records if r.geoid in scores]
    total_pop = sum(p for _, _, p in rows)
    rows = [row for row in rows if row[0] is not None]
    out = []
    for k in range(1, int(n_steps) + 1):
        t = k * step
        if SweepDirection(direction) is SweepDirection.CONCENTRATING:
            subset = [(sc, p) for share, sc, p in rows if share >= 100.0 - t]
        else:
            subset = [(sc, p) for share, sc, p in rows if share <= t]
        if subset:
            vals = [sc for sc, _ in subset]
            med, sd = region_median(vals), reduce.population_sd(vals)
        else:
            med = sd = None
        pop = sum(p for _, p in subset)
        out.append(SweepPoint(t, len(subset), med, sd, pop / total_pop if total_pop else math.nan))
    return out
