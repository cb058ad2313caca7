import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import given
from hypothesis import strategies as st

from depriv.errors import DeprivError, EmptyInputError, NetworkError, ParseError, SchemaError
from depriv.ingest import (
    DEFAULT_SCHEMA,
    ColumnSchema,
    Derived,
    apply_place_crosswalk,
    fetch_acs,
    join,
    parse_attributes_csv,
    parse_geometry_geojson,
    parse_many,
    parse_place_table,
)
from depriv.model import Geometry

HEADER = "geoid,state_fips,place_id,percpov,percvac,unemp,nohs,population,popdens,percblk,percwht"
GOOD = "260163512001,26,2622000,45.7,20.0,15.0,22.0,800,3100.5,60.0,30.0"
SQUARE = [[[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]]]


def write(tmp_path, text, name="a.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def feature(geoid, geometry):
    return {"type": "Feature", "properties": {"GEOID": geoid}, "geometry": geometry}


def write_fc(tmp_path, features, name="g.geojson"):
    p = tmp_path / name
    p.write_text(json.dumps({"type": "FeatureCollection", "features": features}))
    return p


def test_well_formed_row(tmp_path):
    d = parse_attributes_csv(write(tmp_path, f"{HEADER}\n{GOOD}\n"))
    assert len(d.records) == 1 and d.quarantine == ()
    r = d.records[0]
    assert (r.percpov, r.percvac, r.unemp, r.nohs, r.population) == (45.7, 20.0, 15.0, 22.0, 800)
    assert r.place_id == "2622000" and r.state_fips == "26" and r.percwht == 30.0


def test_out_of_range_quarantined(tmp_path):
    row = GOOD.replace("45.7", "120")
    d = parse_attributes_csv(write(tmp_path, f"{HEADER}\n{row}\n"))
    assert d.records == () and [q.reason for q in d.quarantine] == ["OUT_OF_RANGE"]


def test_duplicate_geoid_keeps_first(tmp_path):
    second = GOOD.replace("45.7", "10.0")
    d = parse_attributes_csv(write(tmp_path, f"{HEADER}\n{GOOD}\n{second}\n"))
    assert [r.percpov for r in d.records] == [45.7]
    assert [q.reason for q in d.quarantine] == ["DUPLICATE_GEOID"]


@pytest.mark.parametrize(
    "row,reason",
    [
        (GOOD.replace("260163512001", "2601635120"), "BAD_GEOID"),
        (GOOD.replace("15.0", "abc"), "NON_NUMERIC"),
        (GOOD.replace("15.0", "nan"), "NON_NUMERIC"),
        (GOOD.replace("260163512001", "020163512001").replace(",26,", ",02,"), "NONCONTIGUOUS_STATE"),
    ],
)
def test_reason_codes(tmp_path, row, reason):
    d = parse_attributes_csv(write(tmp_path, f"{HEADER}\n{row}\n"))
    assert [q.reason for q in d.quarantine] == [reason]


def test_noncontiguous_override(tmp_path):
    row = GOOD.replace("260163512001", "150010001001").replace(",26,", ",15,")
    d = parse_attributes_csv(write(tmp_path, f"{HEADER}\n{row}\n"), include_noncontiguous=True)
    assert len(d.records) == 1


def test_empty_file_and_missing_column(tmp_path):
    with pytest.raises(EmptyInputError):
        parse_attributes_csv(write(tmp_path, ""))
    with pytest.raises(SchemaError) as exc:
        parse_attributes_csv(write(tmp_path, "geoid,percpov\n"))
    assert exc.value.exit_code == 4


def test_unreadable_file(tmp_path):
    with pytest.raises(DeprivError) as exc:
        parse_attributes_csv(tmp_path / "nope.csv")
    assert exc.value.code == "UNREADABLE" and exc.value.exit_code == 3


def test_derived_columns_and_zero_denominator(tmp_path):
    schema = ColumnSchema(
        columns={"geoid": "GEOID", "population": "pop", "percvac": "v", "unemp": "u", "nohs": "h"},
        derived={"percpov": Derived(("p1", "p2"), ("pt",))},
    )
    text = "GEOID,pop,v,u,h,p1,p2,pt\n260163512001,10,1,2,3,1,3,8\n260163512002,10,1,2,3,0,0,0\n"
    d = parse_attributes_csv(write(tmp_path, text), schema)
    assert [r.percpov for r in d.records] == [50.0]
    assert [q.reason for q in d.quarantine] == ["ZERO_DENOMINATOR"]


def test_schema_file_round_trip(tmp_path):
    p = tmp_path / "schema.json"
    p.write_text(json.dumps({"columns": {c: c for c in DEFAULT_SCHEMA.columns}}))
    assert ColumnSchema.load(p).columns == DEFAULT_SCHEMA.columns


csv_cell = st.one_of(
    st.just(""), st.just("nan"), st.just("-1"), st.just("101"), st.sampled_from(["0", "12.5", "99.9"]),
    st.text(alphabet="0123456789.-eE,x ", max_size=8),
)


@st.composite
def csv_rows(draw):
    n = draw(st.integers(0, 12))
    rows = []
    for _ in range(n):
        geoid = draw(st.sampled_from(["260163512001", "260163512002", "390010001001", "110010001001", "2601", "x"]))
        cells = [geoid, geoid[:2], draw(st.sampled_from(["", "2622000"]))]
        cells += [draw(csv_cell) for _ in range(8)]
        rows.append(",".join(cells))
    return rows


@given(csv_rows())
def test_conservation(tmp_path_factory, rows):
    p = tmp_path_factory.mktemp("c") / "a.csv"
    p.write_text(HEADER + "\n" + "\n".join(rows) + "\n", encoding="utf-8")
    try:
        d = parse_attributes_csv(p)
    except ParseError:
        return
    nonblank = [r for r in rows if r.replace(",", "").strip()]
    assert len(d.records) + len(d.quarantine) == len(nonblank)
    assert len({r.geoid for r in d.records}) == len(d.records)


@given(st.binary(max_size=400))
def test_parse_totality(tmp_path_factory, data):
    p = tmp_path_factory.mktemp("t") / "a.csv"
    p.write_bytes(data)
    try:
        d = parse_attributes_csv(p)
    except DeprivError as exc:
        assert exc.exit_code in (4, 5, 6)
    else:
        assert d.records is not None


def test_parse_many_matches_sequential(tmp_path):
    a = write(tmp_path, f"{HEADER}\n{GOOD}\n", "a.csv")
    b = write(tmp_path, f"{HEADER}\n{GOOD.replace('260163512001', '260163512002')}\n{GOOD}\n", "b.csv")
    one = parse_many([a, b], workers=1)
    many = parse_many([b, a], workers=4)
    assert one == many
    assert [r.geoid for r in one.records] == ["260163512001", "260163512002"]
    assert [q.reason for q in one.quarantine] == ["DUPLICATE_GEOID"]


def test_geojson_polygon(tmp_path):
    g = parse_geometry_geojson(write_fc(tmp_path, [feature("260163512001", {"type": "Polygon", "coordinates": SQUARE})]))
    assert list(g) == ["260163512001"] and len(g["260163512001"].polygons) == 1


def test_geojson_linestring_quarantined(tmp_path):
    g = parse_geometry_geojson(
        write_fc(tmp_path, [feature("260163512001", {"type": "LineString", "coordinates": [[0, 0], [1, 1]]})])
    )
    assert len(g) == 0 and [q.reason for q in g.quarantine] == ["BAD_GEOMETRY_TYPE"]


def test_geojson_multipolygon(tmp_path):
    shifted = [[[x + 3, y] for x, y in SQUARE[0]]]
    g = parse_geometry_geojson(
        write_fc(tmp_path, [feature("260163512001", {"type": "MultiPolygon", "coordinates": [SQUARE, shifted]})])
    )
    assert len(g["260163512001"].polygons) == 2


def test_geojson_unclosed_ring(tmp_path):
    ring = [[[0, 0], [1, 0], [1, 1], [0, 1]]]
    g = parse_geometry_geojson(write_fc(tmp_path, [feature("260163512001", {"type": "Polygon", "coordinates": ring})]))
    assert len(g) == 0 and [q.reason for q in g.quarantine] == ["BAD_RING"]


def test_geojson_malformed_has_byte_offset(tmp_path):
    p = tmp_path / "bad.geojson"
    text = '{"name": "Ypsilanti é", "type": "FeatureCollection", "features": [ }'
    p.write_text(text, encoding="utf-8")
    with pytest.raises(ParseError) as exc:
        parse_geometry_geojson(p)
    # One two-byte character precedes the error, so bytes run one past characters.
    assert exc.value.code == "BAD_JSON" and exc.value.detail["offset"] == text.index("}") + 1


def _dataset(tmp_path, n=3):
    rows = [GOOD.replace("260163512001", f"26016351200{i + 1}") for i in range(n)]
    return parse_attributes_csv(write(tmp_path, HEADER + "\n" + "\n".join(rows) + "\n"))


def _geom(geoid):
    return Geometry(geoid, ((((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 0.0)),),))


def test_join_examples(tmp_path):
    d = _dataset(tmp_path)
    geoms = {g: _geom(g) for g in ("260163512001", "260163512002")}
    j = join(d, geoms)
    assert len(j.records) == 3 and len(j.geometries) == 2
    empty = join(d, {})
    assert empty.records == d.records and empty.geometries is None and empty.quarantine == d.quarantine
    assert empty.provenance != d.provenance
    orphan = join(d, {"260163512009": _geom("260163512009")})
    assert [q.reason for q in orphan.quarantine] == ["ORPHAN_GEOMETRY"]
    assert set(orphan.geometries or {}) <= {r.geoid for r in orphan.records}


def test_join_idempotent(tmp_path):
    d = _dataset(tmp_path)
    geoms = {g: _geom(g) for g in ("260163512001", "260163512009")}
    once = join(d, geoms)
    assert join(once, geoms) == once


def test_crosswalk_and_place_table(tmp_path):
    d = _dataset(tmp_path, 2)
    cw = write(tmp_path, "geoid,place_id\n260163512002,2699999\n", "cw.csv")
    out = apply_place_crosswalk(d, cw)
    assert [r.place_id for r in out.records] == ["2622000", "2699999"]
    pt = write(tmp_path, "place_id,percpov,popdens\n2622000,30.5,\n", "pt.csv")
    assert parse_place_table(pt)["2622000"]["percpov"] == 30.5
    assert parse_place_table(pt)["2622000"]["popdens"] is None


# --- fetch_acs against a local server ---------------------------------------


class _Server:
    def __init__(self, statuses):
        self.statuses = list(statuses)
        self.requests = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_GET(self):
                outer.requests.append(self.path)
                status = outer.statuses.pop(0) if outer.statuses else 200
                if status == 200:
                    body = json.dumps(
                        [
                            ["B01003_001E", "state", "county", "tract", "block group"],
                            ["950", "26", "163", "512000", "2"],
                            ["800", "26", "163", "512000", "1"],
                        ]
                    )
                else:
                    body = f"status {status} body"
                data = body.encode()
                self.send_response(status)
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.httpd = HTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_port}/data/{{end_year}}/acs/acs5"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


def test_fetch_shape(tmp_path, monkeypatch):
    monkeypatch.delenv("CENSUS_API_KEY", raising=False)
    with _Server([200]) as srv:
        paths = fetch_acs("2015-2019", ["B01003_001E"], ["26"], srv.url, tmp_path, backoff=0.01)
    lines = paths[0].read_text().splitlines()
    assert lines == ["GEOID,B01003_001E", "261635120001,800", "261635120002,950"]
    assert "/data/2019/acs/acs5" in srv.requests[0]


def test_fetch_retries_after_5xx(tmp_path):
    with _Server([500, 500, 200]) as srv:
        paths = fetch_acs("2015-2019", ["B01003_001E"], ["26"], srv.url, tmp_path, backoff=0.01)
    assert len(srv.requests) == 3 and paths[0].exists()


def test_fetch_gives_up_after_three_5xx(tmp_path):
    with _Server([500, 503, 502, 200]) as srv:
        with pytest.raises(NetworkError) as exc:
            fetch_acs("2015-2019", ["B01003_001E"], ["26"], srv.url, tmp_path, backoff=0.01)
    assert exc.value.code == "NETWORK" and len(srv.requests) == 3


def test_fetch_404_is_fatal_with_status(tmp_path):
    with _Server([404]) as srv:
        with pytest.raises(NetworkError) as exc:
            fetch_acs("2015-2019", ["B01003_001E"], ["26"], srv.url, tmp_path, backoff=0.01)
    assert exc.value.detail["status"] == 404 and "status 404 body" in exc.value.detail["body"]
    assert len(srv.requests) == 1


def test_absent_covariate_columns_become_absent_values(tmp_path):
    head = "geoid,place_id,percpov,percvac,unemp,nohs,population"
    d = parse_attributes_csv(write(tmp_path, f"{head}\n260163512001,,1,2,3,4,50\n"))
    r = d.records[0]
    assert (r.popdens, r.percblk, r.percwht) == (None, None, None) and r.state_fips == "26"
