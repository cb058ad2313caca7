"""Run configuration shared by every pipeline stage."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

from .aggregate import SweepDirection, ThresholdSpec
from .errors import ConfigError
from .ingest import ACS_2019_VARIABLES, DEFAULT_ENDPOINT
from .model import CONTIGUOUS_STATE_FIPS
from .spatial import Contiguity

PATH_KEYS = ("attributes", "geometry", "schema", "place_table", "place_crosswalk", "city_membership", "weights_file")

DETROIT_PLACE = "2622000"


@dataclass(frozen=True)
class RunConfig:
    attributes: Optional[str] = None
    geometry: Optional[str] = None
    schema: Optional[str] = None
    # Place-level figures: the place-level index variant and covariate overrides.
    place_table: Optional[str] = None
    place_crosswalk: Optional[str] = None
    # geoid,city_id CSV for custom city boundaries.
    city_membership: Optional[str] = None
    weights: str = "sd"
    weights_file: Optional[str] = None
    threshold: str = f"region:{DETROIT_PLACE}"
    contiguity: str = "queen"
    within_city_only: bool = False
    sweep_direction: str = "concentrating"
    sweep_step: float = 10.0
    out: str = "out"
    workers: int = 1
    include_noncontiguous: bool = False
    large_city_population: int = 250_000
    min_place_population: int = 500
    cov_type: str = "HC1"
    bin_width: float = 1.0
    snap_precision: float = 1e-7
    geoid_property: str = "GEOID"
    fetch_year_span: str = "2015-2019"
    fetch_variables: tuple = ACS_2019_VARIABLES
    fetch_states: tuple = tuple(sorted(CONTIGUOUS_STATE_FIPS))
    fetch_endpoint: str = DEFAULT_ENDPOINT
    fetch_dir: str = "acs_raw"

    def validate(self) -> "RunConfig":
        if self.weights not in ("sd", "pca", "file"):
            raise ConfigError("BAD_WEIGHTS", f"weights must be sd, pca or file, got {self.weights!r}")
        if self.weights == "file" and not self.weights_file:
            raise ConfigError("BAD_WEIGHTS", "weights=file needs weights_file")
        ThresholdSpec.parse(self.threshold)
        try:
            Contiguity(self.contiguity)
            SweepDirection(self.sweep_direction)
        except ValueError as exc:
            raise ConfigError("BAD_VALUE", str(exc)) from exc
        if self.cov_type not in ("HC0", "HC1"):
            raise ConfigError("BAD_VALUE", f"cov_type must be HC0 or HC1, got {self.cov_type!r}")
        if self.workers < 1 or self.bin_width <= 0 or self.snap_precision <= 0:
            raise ConfigError("BAD_VALUE", "workers, bin_width and snap_precision must be positive")
        for key in PATH_KEYS:
            value = getattr(self, key)
            if value is not None and not Path(value).exists():
                raise ConfigError("MISSING_FILE", f"{key} file {value} does not exist", key=key)
        return self

    @classmethod
    def from_dict(cls, d: dict, base_dir: Optional[Path] = None) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError("UNKNOWN_KEYS", f"unknown config keys {unknown}", keys=unknown)
        d = dict(d)
        if base_dir is not None:
            for key in PATH_KEYS + ("out", "fetch_dir"):
                if d.get(key) is not None and not Path(d[key]).is_absolute():
                    d[key] = str(base_dir / d[key])
        for key in ("fetch_variables", "fetch_states"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError("UNREADABLE", f"{path}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError("BAD_JSON", f"{path}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("BAD_JSON", f"{path}: top level must be an object")
        return cls.from_dict(d, path.parent)

    def override(self, **kwargs) -> "RunConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})

    def to_dict(self) -> dict:
        return asdict(self)
