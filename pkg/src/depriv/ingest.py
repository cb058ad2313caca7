"""Attribute CSV and boundary GeoJSON ingestion, joins, and the ACS fetcher.

Parsing never crashes on bad rows: each row is either accepted as a
``BlockGroupRecord`` or quarantined with exactly one reason code. Fatal
problems (unreadable file, missing mapped column, malformed JSON) raise a
``DeprivError``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional

import requests

from .errors import EmptyInputError, InputIOError, NetworkError, ParseError, SchemaError
from .model import (
    CONTIGUOUS_STATE_FIPS,
    COVARIATES,
    VARIABLES,
    BlockGroupRecord,
    Geometry,
    is_geoid,
    record_problem,
    ring_problem,
)

log = logging.getLogger(__name__)

LOGICAL_COLUMNS = ("geoid", "state_fips", "place_id") + VARIABLES + ("population",) + COVARIATES
REQUIRED_LOGICAL = ("geoid",) + VARIABLES + ("population",)
OPTIONAL_NUMERIC = COVARIATES

SQ_MILE_M2 = 2_589_988.110336


@dataclass(frozen=True)
class Derived:
    """A field computed as ``scale * sum(numerator) / sum(denominator)``."""

    numerator: tuple
    denominator: tuple
    scale: float = 100.0


@dataclass(frozen=True)
class ColumnSchema:
    columns: Mapping[str, str] = field(default_factory=dict)
    derived: Mapping[str, Derived] = field(default_factory=dict)

    def __post_init__(self):
        unknown = (set(self.columns) | set(self.derived)) - set(LOGICAL_COLUMNS)
        if unknown:
            raise SchemaError("UNKNOWN_LOGICAL_COLUMN", f"unknown logical columns {sorted(unknown)}")
        missing = [c for c in REQUIRED_LOGICAL if c not in self.columns and c not in self.derived]
        if missing:
            raise SchemaError("UNMAPPED_COLUMN", f"schema does not map {missing}")
        if "geoid" in self.derived:
            raise SchemaError("UNMAPPED_COLUMN", "geoid cannot be derived")

    def source_columns(self) -> set:
        cols = set(self.columns.values())
        for d in self.derived.values():
            cols.update(d.numerator)
            cols.update(d.denominator)
        return cols

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnSchema":
        derived = {
            k: Derived(tuple(v["numerator"]), tuple(v["denominator"]), float(v.get("scale", 100.0)))
            for k, v in d.get("derived", {}).items()
        }
        return cls(dict(d.get("columns", {})), derived)

    @classmethod
    def load(cls, path) -> "ColumnSchema":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except OSError as exc:
            raise InputIOError("UNREADABLE", f"{path}: {exc}") from exc
        except (ValueError, KeyError, TypeError) as exc:
            raise SchemaError("BAD_SCHEMA_FILE", f"{path}: {exc}") from exc


# Pre-computed percentages, one column per logical field (state_fips comes from the geoid).
DEFAULT_SCHEMA = ColumnSchema(
    columns={c: c for c in LOGICAL_COLUMNS if c != "state_fips"},
)

# ACS 2015-2019 5-year block-group tables. Poverty uses C17002 (ratio of income
# to poverty level) because B17001 is not published for block groups.
ACS_NOHS_CODES = tuple(f"B15003_{i:03d}E" for i in range(2, 17))
ACS_2019_SCHEMA = ColumnSchema(
    columns={"geoid": "GEOID", "population": "B01003_001E"},
    derived={
        "percpov": Derived(("C17002_002E", "C17002_003E"), ("C17002_001E",)),
        "percvac": Derived(("B25002_003E",), ("B25002_001E",)),
        "unemp": Derived(("B23025_005E",), ("B23025_003E",)),
        "nohs": Derived(ACS_NOHS_CODES, ("B15003_001E",)),
        "percblk": Derived(("B02001_003E",), ("B02001_001E",)),
        "percwht": Derived(("B02001_002E",), ("B02001_001E",)),
    },
)
ACS_2019_VARIABLES = tuple(sorted(ACS_2019_SCHEMA.source_columns() - {"GEOID"}))


@dataclass(frozen=True)
class QuarantineEntry:
    source: str
    line: int
    reason: str
    raw: str

    def to_dict(self) -> dict:
        return {"source": self.source, "line": self.line, "reason": self.reason, "raw": self.raw}


@dataclass(frozen=True)
class Dataset:
    records: tuple
    geometries: Optional[Mapping[str, Geometry]] = None
    provenance: str = ""
    quarantine: tuple = ()

    def by_geoid(self) -> dict:
        return {r.geoid: r for r in self.records}

    def reason_counts(self) -> dict:
        counts: dict = {}
        for q in self.quarantine:
            counts[q.reason] = counts.get(q.reason, 0) + 1
        return dict(sorted(counts.items()))


class GeometryMap(dict):
    """``geoid -> Geometry`` plus the features rejected while parsing."""

    def __init__(self, *args, quarantine=(), **kwargs):
        super().__init__(*args, **kwargs)
        self.quarantine = tuple(quarantine)


def _number(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(text)
    return value


class _Reject(Exception):
    def __init__(self, reason: str):
        self.reason = reason


def _read_field(logical: str, row: list, index: dict, schema: ColumnSchema):
    """Resolve one logical numeric field. Returns None for absent optional values."""
    if logical in schema.derived:
        spec = schema.derived[logical]
        try:
            num = math.fsum(_number(row[index[c]]) for c in spec.numerator)
            den = math.fsum(_number(row[index[c]]) for c in spec.denominator)
        except (ValueError, IndexError):
            if logical in OPTIONAL_NUMERIC:
                return None
            raise _Reject("NON_NUMERIC")
        if num < 0 or den < 0:
            raise _Reject("OUT_OF_RANGE")
        if den == 0:
            if logical in OPTIONAL_NUMERIC:
                return None
            raise _Reject("ZERO_DENOMINATOR")
        return spec.scale * num / den
    if logical not in schema.columns:
        return None
    text = row[index[schema.columns[logical]]].strip() if index[schema.columns[logical]] < len(row) else ""
    if text == "" and logical in OPTIONAL_NUMERIC:
        return None
    try:
        return _number(text)
    except ValueError:
        raise _Reject("NON_NUMERIC")


def _text_field(logical: str, row: list, index: dict, schema: ColumnSchema) -> Optional[str]:
    if logical not in schema.columns:
        return None
    i = index[schema.columns[logical]]
    return row[i].strip() if i < len(row) else ""


def _parse_row(row, index, schema, include_noncontiguous):
    geoid = _text_field("geoid", row, index, schema) or ""
    if not is_geoid(geoid):
        raise _Reject("BAD_GEOID")
    state = _text_field("state_fips", row, index, schema)
    if state is None:
        state = geoid[:2]
    elif state.isdigit() and len(state) < 2:
        state = state.zfill(2)
    place = _text_field("place_id", row, index, schema) or ""
    values = {v: _read_field(v, row, index, schema) for v in VARIABLES + ("population",) + COVARIATES}
    pop = values["population"]
    if pop != int(pop):
        raise _Reject("NON_NUMERIC")
    pop = int(pop)
    comps = tuple(values[v] for v in VARIABLES)
    reason = record_problem(geoid, state, comps, pop, values["popdens"], values["percblk"], values["percwht"])
    if reason:
        raise _Reject(reason)
    if not include_noncontiguous and state not in CONTIGUOUS_STATE_FIPS:
        raise _Reject("NONCONTIGUOUS_STATE")
    return BlockGroupRecord(
        geoid=geoid,
        state_fips=state,
        place_id=place,
        percpov=comps[0],
        percvac=comps[1],
        unemp=comps[2],
        nohs=comps[3],
        population=pop,
        popdens=values["popdens"],
        percblk=values["percblk"],
        percwht=values["percwht"],
    )


def _drop_absent_covariates(schema: ColumnSchema, index: dict) -> ColumnSchema:
    """Covariates whose source columns are missing from the header become absent values."""
    def present(logical):
        if logical in schema.derived:
            d = schema.derived[logical]
            return all(c in index for c in d.numerator + d.denominator)
        return schema.columns.get(logical) in index

    gone = {c for c in OPTIONAL_NUMERIC if (c in schema.columns or c in schema.derived) and not present(c)}
    if not gone:
        return schema
    return ColumnSchema(
        {k: v for k, v in schema.columns.items() if k not in gone},
        {k: v for k, v in schema.derived.items() if k not in gone},
    )


def parse_attributes_csv(
    path,
    schema: ColumnSchema = DEFAULT_SCHEMA,
    include_noncontiguous: bool = False,
) -> Dataset:
    source = str(path)
    records, quarantine, seen = [], [], set()
    try:
        fh = open(path, encoding="utf-8-sig", newline="")
    except OSError as exc:
        raise InputIOError("UNREADABLE", f"{path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader, None)
            if header is None:
                raise EmptyInputError("EMPTY_INPUT", f"{path} has no header row")
            index: dict = {}
            for i, name in enumerate(header):
                index.setdefault(name.strip(), i)
            schema = _drop_absent_covariates(schema, index)
            missing = sorted(c for c in schema.source_columns() if c not in index)
            if missing:
                raise SchemaError("MISSING_COLUMN", f"{path}: header lacks {missing}", columns=missing)
            for row in reader:
                if not any(cell.strip() for cell in row):
                    continue
                try:
                    rec = _parse_row(row, index, schema, include_noncontiguous)
                    if rec.geoid in seen:
                        raise _Reject("DUPLICATE_GEOID")
                except _Reject as rej:
                    quarantine.append(QuarantineEntry(source, reader.line_num, rej.reason, ",".join(row)))
                    continue
                seen.add(rec.geoid)
                records.append(rec)
        except UnicodeDecodeError as exc:
            raise ParseError("BAD_ENCODING", f"{path}: {exc}", offset=exc.start) from exc
        except csv.Error as exc:
            raise ParseError("BAD_CSV", f"{path}: {exc}", line=reader.line_num) from exc
    log.info("parsed %s: %d records, %d quarantined", source, len(records), len(quarantine))
    return Dataset(tuple(records), None, f"attributes:{source}", tuple(quarantine))


def merge_datasets(datasets) -> Dataset:
    """Order-insensitive merge keyed by geoid; records come out sorted by geoid.

    A geoid appearing in more than one input keeps the copy from the
    lexicographically first source and quarantines the rest.
    """
    datasets = sorted(datasets, key=lambda d: d.provenance)
    kept: dict = {}
    quarantine = []
    for d in datasets:
        quarantine.extend(d.quarantine)
        for r in d.records:
            if r.geoid in kept:
                quarantine.append(QuarantineEntry(d.provenance, 0, "DUPLICATE_GEOID", r.geoid))
            else:
                kept[r.geoid] = r
    records = tuple(kept[g] for g in sorted(kept))
    return Dataset(records, None, "; ".join(d.provenance for d in datasets), tuple(quarantine))


def parse_many(paths, schema: ColumnSchema = DEFAULT_SCHEMA, workers: int = 1, **kwargs) -> Dataset:
    paths = list(paths)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda p: parse_attributes_csv(p, schema, **kwargs), paths))
    else:
        parts = [parse_attributes_csv(p, schema, **kwargs) for p in paths]
    return merge_datasets(parts)


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


def _ring(coords) -> tuple:
    return tuple((float(pt[0]), float(pt[1])) for pt in coords)


def parse_geometry_geojson(path, id_property: str = "GEOID") -> GeometryMap:
    source = str(path)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputIOError("UNREADABLE", f"{path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise ParseError("BAD_ENCODING", f"{path}: {exc}", offset=exc.start) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = _byte_offset(text, exc.pos)
        raise ParseError("BAD_JSON", f"{path}: {exc.msg} at byte {offset}", offset=offset) from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise ParseError("NOT_FEATURE_COLLECTION", f"{path} is not a GeoJSON FeatureCollection")
    features = doc.get("features")
    if not isinstance(features, list):
        raise ParseError("NOT_FEATURE_COLLECTION", f"{path} has no features array")

    out: dict = {}
    quarantine = []
    for i, feat in enumerate(features):
        props = (feat.get("properties") or {}) if isinstance(feat, dict) else {}
        geoid = str(props.get(id_property, "")) if isinstance(props, dict) else ""

        def reject(reason):
            quarantine.append(QuarantineEntry(source, i, reason, geoid))

        if not is_geoid(geoid):
            reject("BAD_GEOID")
            continue
        geom = feat.get("geometry") or {}
        gtype = geom.get("type") if isinstance(geom, dict) else None
        try:
            if gtype == "Polygon":
                polygons = (tuple(_ring(r) for r in geom["coordinates"]),)
            elif gtype == "MultiPolygon":
                polygons = tuple(tuple(_ring(r) for r in poly) for poly in geom["coordinates"])
            else:
                reject("BAD_GEOMETRY_TYPE")
                continue
        except (KeyError, TypeError, ValueError, IndexError):
            reject("BAD_COORDINATE")
            continue
        problems = [ring_problem(r) for poly in polygons for r in poly]
        if not polygons or any(not poly for poly in polygons):
            problems.append("BAD_RING")
        problems = [p for p in problems if p]
        if problems:
            reject(problems[0])
            continue
        if geoid in out:
            reject("DUPLICATE_GEOID")
            continue
        out[geoid] = Geometry(geoid, polygons)
    return GeometryMap(out, quarantine=quarantine)


def _append_note(provenance: str, note: str) -> str:
    notes = [n for n in provenance.split("; ") if n]
    if note not in notes:
        notes.append(note)
    return "; ".join(notes)


def join(attrs: Dataset, geoms: Mapping[str, Geometry]) -> Dataset:
    """Attach geometries by exact geoid; orphans are quarantined. Idempotent."""
    known = {r.geoid for r in attrs.records}
    attached = dict(attrs.geometries or {})
    quarantine = list(attrs.quarantine)
    present = set(quarantine)
    extra = list(getattr(geoms, "quarantine", ()))
    for geoid in sorted(geoms):
        if geoid in known:
            attached[geoid] = geoms[geoid]
        else:
            extra.append(QuarantineEntry("geometry", 0, "ORPHAN_GEOMETRY", geoid))
    for q in extra:
        if q not in present:
            present.add(q)
            quarantine.append(q)
    note = f"joined {sum(1 for g in geoms if g in known)} geometries"
    return replace(
        attrs,
        geometries=attached if (attached or attrs.geometries is not None) else None,
        provenance=_append_note(attrs.provenance, note),
        quarantine=tuple(quarantine),
    )


def apply_place_crosswalk(dataset: Dataset, path) -> Dataset:
    """Assign place_id from a ``geoid,place_id`` CSV; unlisted block groups keep theirs."""
    try:
        with open(path, encoding="utf-8-sig", newline="") as fh:
            mapping = {row["geoid"].strip(): row["place_id"].strip() for row in csv.DictReader(fh)}
    except OSError as exc:
        raise InputIOError("UNREADABLE", f"{path}: {exc}") from exc
    except (KeyError, AttributeError) as exc:
        raise SchemaError("MISSING_COLUMN", f"{path}: crosswalk needs geoid,place_id") from exc
    records = tuple(
        replace(r, place_id=mapping[r.geoid]) if r.geoid in mapping else r for r in dataset.records
    )
    return replace(dataset, records=records, provenance=_append_note(dataset.provenance, f"places:{path}"))


PLACE_FIELDS = VARIABLES + COVARIATES + ("population",)


def parse_place_table(path) -> dict:
    """Place-level figures: ``place_id`` plus any of the index/covariate columns.

    Returns ``place_id -> {field: float or None}``. Used both for the
    place-level index variant and to override region covariates.
    """
    out = {}
    try:
        with open(path, encoding="utf-8-sig", newline="") as fh:
            reader = csv.DictReader(fh)
            if not reader.fieldnames or "place_id" not in reader.fieldnames:
                raise SchemaError("MISSING_COLUMN", f"{path}: place table needs a place_id column")
            for row in reader:
                entry = {}
                for name in PLACE_FIELDS:
                    text = (row.get(name) or "").strip()
                    try:
                        entry[name] = _number(text) if text else None
                    except ValueError:
                        entry[name] = None
                out[row["place_id"].strip()] = entry
    except OSError as exc:
        raise InputIOError("UNREADABLE", f"{path}: {exc}") from exc
    return out


def write_quarantine_jsonl(entries, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for q in entries:
            fh.write(json.dumps(q.to_dict(), sort_keys=True) + "\n")


# --- ACS HTTP API -----------------------------------------------------------

DEFAULT_ENDPOINT = "https://api.census.gov/data/{end_year}/acs/acs5"
_MAX_VARS_PER_CALL = 45


def _get_with_retry(session, url, params, attempts, backoff, timeout):
    last = None
    for attempt in range(attempts):
        try:
            resp = session.get(url, params=params, timeout=timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            last = f"{type(exc).__name__}: {exc}"
        else:
            if resp.status_code < 400:
                return resp
            if resp.status_code < 500:
                raise NetworkError(
                    "HTTP_ERROR",
                    f"{resp.status_code} from {url}: {resp.text[:500]}",
                    status=resp.status_code,
                    body=resp.text,
                )
            last = f"HTTP {resp.status_code}"
        if attempt + 1 < attempts:
            time.sleep(backoff * 2**attempt)
    raise NetworkError("NETWORK", f"{url} failed after {attempts} attempts ({last})")


def fetch_acs(
    year_span: str,
    variable_ids,
    state_fips,
    endpoint: str = DEFAULT_ENDPOINT,
    out_dir=".",
    *,
    session: Optional[requests.Session] = None,
    attempts: int = 3,
    backoff: float = 1.0,
    timeout: float = 60.0,
) -> list:
    """Download block-group tables, one CSV per state: ``GEOID,<variables...>``.

    Re-fetching overwrites. Returns the written paths.
    """
    end_year = year_span.split("-")[-1].strip()
    base = endpoint.format(end_year=end_year)
    variable_ids = list(variable_ids)
    session = session or requests.Session()
    api_key = os.environ.get("CENSUS_API_KEY")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for state in state_fips:
        table: dict = {}
        for start in range(0, len(variable_ids), _MAX_VARS_PER_CALL):
            chunk = variable_ids[start : start + _MAX_VARS_PER_CALL]
            params = {
                "get": ",".join(chunk),
                "for": "block group:*",
                "in": f"state:{state} county:* tract:*",
            }
            if api_key:
                params["key"] = api_key
            resp = _get_with_retry(session, base, params, attempts, backoff, timeout)
            try:
                rows = resp.json()
                header = rows[0]
                pos = {name: i for i, name in enumerate(header)}
                for row in rows[1:]:
                    geoid = "".join(row[pos[k]] for k in ("state", "county", "tract", "block group"))
                    table.setdefault(geoid, {}).update({v: row[pos[v]] for v in chunk})
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise ParseError("BAD_API_RESPONSE", f"unexpected payload from {base}: {exc}") from exc
        path = out_dir / f"acs_{year_span}_{state}.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["GEOID"] + variable_ids)
            for geoid in sorted(table):
                writer.writerow([geoid] + [table[geoid].get(v, "") for v in variable_ids])
        log.info("wrote %s (%d block groups)", path, len(table))
        written.append(path)
    return written
