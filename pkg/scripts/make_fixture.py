"""Regenerate the bundled 200-block-group fixture in tests/data/."""

from pathlib import Path

from depriv import synth

DATA = Path(__file__).resolve().parents[1] / "tests" / "data"


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    records = synth.fixture_records()
    synth.write_csv(records, DATA / "fixture_200.csv")
    synth.write_geojson(synth.fixture_geometries(records), DATA / "fixture_200.geojson")
    print(f"wrote {len(records)} records to {DATA}")


if __name__ == "__main__":
    main()
