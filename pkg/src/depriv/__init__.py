"""Block-group socioeconomic deprivation index: scoring, classification,
contiguity-based dispersion and regional regressions."""

from .errors import DeprivError
from .model import (
    AdjacencyGraph,
    BlockGroupRecord,
    Geometry,
    RegionKind,
    RegionSummary,
    RegressionFit,
    ScoredBlockGroup,
    WeightScheme,
    WeightVector,
)

__all__ = [
    "AdjacencyGraph",
    "BlockGroupRecord",
    "DeprivError",
    "Geometry",
    "RegionKind",
    "RegionSummary",
    "RegressionFit",
    "ScoredBlockGroup",
    "WeightScheme",
    "WeightVector",
]
