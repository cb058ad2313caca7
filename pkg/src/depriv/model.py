"""Shared domain types.

All types are frozen dataclasses and round-trip through a canonical JSON form
(``to_json`` / ``from_json``). Percent fields are stored on the 0-100 scale;
absent covariates are ``None``, never 0.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, fields
from typing import Optional

# Index components, in weight order.
VARIABLES = ("percpov", "percvac", "unemp", "nohs")
COVARIATES = ("popdens", "percblk", "percwht")
PERCENT_FIELDS = VARIABLES + ("percblk", "percwht")

# Lower 48 plus DC.
CONTIGUOUS_STATE_FIPS = frozenset(
    "01 04 05 06 08 09 10 11 12 13 16 17 18 19 20 21 22 23 24 25 26 27 28 29 30 "
    "31 32 33 34 35 36 37 38 39 40 41 42 44 45 46 47 48 49 50 51 53 54 55 56".split()
)


def is_geoid(value: str) -> bool:
    return isinstance(value, str) and len(value) == 12 and value.isascii() and value.isdigit()


def record_problem(
    geoid: str,
    state_fips: str,
    components: tuple,
    population: int,
    popdens: Optional[float],
    percblk: Optional[float],
    percwht: Optional[float],
) -> Optional[str]:
    """Return the first violated reason code for these field values, or None."""
    if not is_geoid(geoid) or state_fips != geoid[:2]:
        return "BAD_GEOID"
    for v in components + (percblk, percwht):
        if v is not None and not (0.0 <= v <= 100.0):
            return "OUT_OF_RANGE"
    if population < 0 or (popdens is not None and not (popdens >= 0.0 and math.isfinite(popdens))):
        return "OUT_OF_RANGE"
    return None


@dataclass(frozen=True)
class BlockGroupRecord:
    geoid: str
    state_fips: str
    place_id: str
    percpov: float
    percvac: float
    unemp: float
    nohs: float
    population: int
    popdens: Optional[float] = None
    percblk: Optional[float] = None
    percwht: Optional[float] = None

    def __post_init__(self):
        reason = record_problem(
            self.geoid,
            self.state_fips,
            self.components,
            self.population,
            self.popdens,
            self.percblk,
            self.percwht,
        )
        if reason is not None:
            raise ValueError(f"{reason}: invalid block group {self.geoid!r}")

    @property
    def components(self) -> tuple:
        return (self.percpov, self.percvac, self.unemp, self.nohs)

    @property
    def zero_pop(self) -> bool:
        return self.population == 0

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "BlockGroupRecord":
        return cls(**{f.name: d[f.name] for f in fields(cls) if f.name in d})


def ring_problem(ring) -> Optional[str]:
    if len(ring) < 4 or tuple(ring[0]) != tuple(ring[-1]):
        return "BAD_RING"
    for lon, lat in ring:
        if not (-180.0 <= lon <= 180.0 and -90.0 <= lat <= 90.0):
            return "BAD_COORDINATE"
    return None


@dataclass(frozen=True)
class Geometry:
    """Polygons as ``((outer, *holes), ...)``; rings are tuples of (lon, lat)."""

    geoid: str
    polygons: tuple

    def __post_init__(self):
        for polygon in self.polygons:
            if not polygon:
                raise ValueError(f"BAD_RING: empty polygon in {self.geoid!r}")
            for ring in polygon:
                reason = ring_problem(ring)
                if reason:
                    raise ValueError(f"{reason}: {self.geoid!r}")

    def vertices(self):
        for polygon in self.polygons:
            for ring in polygon:
                yield from ring

    def to_dict(self) -> dict:
        return {
            "geoid": self.geoid,
            "polygons": [[[list(pt) for pt in ring] for ring in poly] for poly in self.polygons],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Geometry":
        polygons = tuple(
            tuple(tuple((float(x), float(y)) for x, y in ring) for ring in poly)
            for poly in d["polygons"]
        )
        return cls(d["geoid"], polygons)


class WeightScheme(str, enum.Enum):
    INVERSE_SD = "InverseSD"
    PCA = "PCA"
    EXPLICIT = "Explicit"


@dataclass(frozen=True)
class WeightVector:
    w: tuple
    scheme: WeightScheme
    source_sds: Optional[tuple] = None

    def __post_init__(self):
        if len(self.w) != 4 or not all(math.isfinite(x) and x >= 0 for x in self.w):
            raise ValueError(f"weights must be four finite non-negative reals, got {self.w}")
        if self.scheme is WeightScheme.INVERSE_SD:
            if self.source_sds is None or any(w != 1.0 / s for w, s in zip(self.w, self.source_sds)):
                raise ValueError("InverseSD weights must be exact reciprocals of source_sds")

    def to_dict(self) -> dict:
        return {
            "w": list(self.w),
            "scheme": self.scheme.value,
            "source_sds": None if self.source_sds is None else list(self.source_sds),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WeightVector":
        sds = d.get("source_sds")
        return cls(
            tuple(float(x) for x in d["w"]),
            WeightScheme(d["scheme"]),
            None if sds is None else tuple(float(x) for x in sds),
        )


@dataclass(frozen=True)
class ScoredBlockGroup:
    geoid: str
    raw_score: float
    score: float
    high_deprivation: bool = False

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ScoredBlockGroup":
        return cls(d["geoid"], float(d["raw_score"]), float(d["score"]), bool(d["high_deprivation"]))


@dataclass(frozen=True)
class AdjacencyGraph:
    """Undirected graph; edges are stored as ``(a, b)`` with ``a < b``."""

    nodes: frozenset
    edges: frozenset

    def __post_init__(self):
        for a, b in self.edges:
            if not a < b:
                raise ValueError(f"edge {(a, b)} is a self-edge or not canonically ordered")

    @classmethod
    def from_pairs(cls, nodes, pairs) -> "AdjacencyGraph":
        edges = set()
        for a, b in pairs:
            if a != b:
                edges.add((a, b) if a < b else (b, a))
        return cls(frozenset(nodes), frozenset(edges))

    def neighbors(self) -> dict:
        out = {n: set() for n in self.nodes}
        for a, b in self.edges:
            out[a].add(b)
            out[b].add(a)
        return out

    def sorted_edges(self) -> list:
        return sorted(self.edges)

    def to_dict(self) -> dict:
        return {"nodes": sorted(self.nodes), "edges": [list(e) for e in self.sorted_edges()]}

    @classmethod
    def from_dict(cls, d: dict) -> "AdjacencyGraph":
        return cls(frozenset(d["nodes"]), frozenset(tuple(e) for e in d["edges"]))


class RegionKind(str, enum.Enum):
    PLACE = "Place"
    STATE = "State"
    CUSTOM_CITY = "CustomCity"


@dataclass(frozen=True)
class RegionSummary:
    region_id: str
    region_kind: RegionKind
    n_bg: int
    median_score: float
    pct_high: float
    n_high: int
    dispersion: Optional[float] = None
    percpov: Optional[float] = None
    popdens: Optional[float] = None
    percblk: Optional[float] = None
    percwht: Optional[float] = None
    population: int = 0
    # Every member high; such places warrant manual verification.
    suspect_complete: bool = False

    def __post_init__(self):
        if self.n_bg <= 0 or self.pct_high != 100.0 * self.n_high / self.n_bg:
            raise ValueError(f"pct_high inconsistent with counts for region {self.region_id!r}")
        if self.dispersion is not None and self.region_kind is RegionKind.STATE:
            raise ValueError("dispersion is only defined for places and custom cities")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["region_kind"] = self.region_kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RegionSummary":
        d = dict(d)
        d["region_kind"] = RegionKind(d["region_kind"])
        return cls(**d)


class ModelKind(str, enum.Enum):
    OLS = "OLS"
    LOGISTIC = "Logistic"


@dataclass(frozen=True)
class RegressionFit:
    model: ModelKind
    names: tuple
    coef: tuple
    cov: tuple
    p_values: tuple
    r2: float
    n_obs: int
    converged: bool = True
    r2_adj: Optional[float] = None
    warnings: tuple = field(default=())

    @property
    def se(self) -> tuple:
        return tuple(math.sqrt(max(self.cov[k][k], 0.0)) for k in range(len(self.coef)))

    def to_dict(self) -> dict:
        return {
            "model": self.model.value,
            "names": list(self.names),
            "coef": list(self.coef),
            "cov": [list(row) for row in self.cov],
            "p_values": list(self.p_values),
            "r2": self.r2,
            "n_obs": self.n_obs,
            "converged": self.converged,
            "r2_adj": self.r2_adj,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionFit":
        return cls(
            ModelKind(d["model"]),
            tuple(d["names"]),
            tuple(d["coef"]),
            tuple(tuple(row) for row in d["cov"]),
            tuple(d["p_values"]),
            d["r2"],
            d["n_obs"],
            d["converged"],
            d.get("r2_adj"),
            tuple(d.get("warnings", ())),
        )


_TYPES = {
    cls.__name__: cls
    for cls in (
        BlockGroupRecord,
        Geometry,
        WeightVector,
        ScoredBlockGroup,
        AdjacencyGraph,
        RegionSummary,
        RegressionFit,
    )
}


def to_json(obj) -> str:
    """Canonical JSON: type-tagged, sorted keys, no whitespace."""
    payload = {"type": type(obj).__name__, "value": obj.to_dict()}
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False)


def from_json(text: str):
    payload = json.loads(text)
    return _TYPES[payload["type"]].from_dict(payload["value"])
