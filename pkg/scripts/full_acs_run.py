"""Prepare a national block-group run from the Census API.

Downloads the contiguous-state tables, merges them into one attributes CSV,
writes the matching column schema and a ``run.json`` that the CLI and the
full-scale acceptance test consume:

    python3 scripts/full_acs_run.py --dir acs --geometry bg.geojson --crosswalk bg_place.csv
    DEPRIV_ACS_DIR=acs pytest tests/test_acceptance.py -k full_acs

Boundaries (TIGER block groups as GeoJSON) and the block-group to place
crosswalk are not fetched; pass local copies. Set CENSUS_API_KEY for the API.
"""

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from depriv import ingest
from depriv.config import RunConfig
from depriv.errors import DeprivError


def merge_csvs(paths, dest: Path) -> int:
    n = 0
    header = None
    with open(dest, "w", encoding="utf-8", newline="") as out:
        writer = csv.writer(out, lineterminator="\n")
        for path in paths:
            with open(path, encoding="utf-8", newline="") as fh:
                reader = csv.reader(fh)
                head = next(reader)
                if header is None:
                    header = head
                    writer.writerow(header)
                elif head != header:
                    raise SystemExit(f"{path}: header differs from the first state file")
                for row in reader:
                    writer.writerow(row)
                    n += 1
    return n


def schema_dict(schema: ingest.ColumnSchema) -> dict:
    return {
        "columns": dict(schema.columns),
        "derived": {
            k: {"numerator": list(d.numerator), "denominator": list(d.denominator), "scale": d.scale}
            for k, d in schema.derived.items()
        },
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dir", required=True, help="output directory for raw tables, merged CSV and run.json")
    ap.add_argument("--geometry", required=True, help="block-group boundaries (GeoJSON)")
    ap.add_argument("--crosswalk", help="block group to place crosswalk CSV (GEOID,place_id)")
    ap.add_argument("--place-table", help="place populations and land areas")
    ap.add_argument("--states", help="comma-separated state FIPS (default: contiguous US)")
    ap.add_argument("--skip-fetch", action="store_true", help="reuse tables already under DIR/raw")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    root = Path(args.dir).resolve()
    raw = root / "raw"
    cfg = RunConfig()
    states = tuple(s.strip() for s in args.states.split(",")) if args.states else cfg.fetch_states
    try:
        if args.skip_fetch:
            paths = [raw / f"acs_{cfg.fetch_year_span}_{s}.csv" for s in states]
        else:
            paths = ingest.fetch_acs(cfg.fetch_year_span, cfg.fetch_variables, states, cfg.fetch_endpoint, raw)
    except DeprivError as exc:
        print(json.dumps({"error": exc.to_dict()}), file=sys.stderr)
        return exc.exit_code

    attributes = root / "attributes.csv"
    n = merge_csvs(paths, attributes)
    (root / "schema.json").write_text(json.dumps(schema_dict(ingest.ACS_2019_SCHEMA), indent=2) + "\n")

    run = replace(
        cfg,
        attributes=str(attributes),
        schema=str(root / "schema.json"),
        geometry=str(Path(args.geometry).resolve()),
        place_crosswalk=str(Path(args.crosswalk).resolve()) if args.crosswalk else None,
        place_table=str(Path(args.place_table).resolve()) if args.place_table else None,
        out=str(root / "out"),
    )
    (root / "run.json").write_text(json.dumps(run.to_dict(), indent=2) + "\n")
    print(f"{n} block groups from {len(paths)} states -> {root / 'run.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
