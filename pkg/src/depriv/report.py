"""Output artifacts: SVG histogram, score-annotated GeoJSON, ranking and
regression tables."""

from __future__ import annotations

import csv
import json
import math
from typing import Mapping, Optional, Sequence
from xml.sax.saxutils import escape

from .model import Geometry, RegionSummary


def histogram_svg(
    bins: Sequence[tuple],
    bin_width: float,
    threshold: Optional[float] = None,
    median: Optional[float] = None,
    title: str = "Distribution of deprivation scores",
    width: int = 800,
    height: int = 400,
) -> str:
    """One ``<rect class="bar">`` per non-empty bin; optional vertical marker lines."""
    ml, mr, mt, mb = 50, 20, 30, 40
    pw, ph = width - ml - mr, height - mt - mb
    lo = min((e for e, _ in bins), default=0.0)
    hi = max((e + bin_width for e, _ in bins), default=1.0)
    if threshold is not None:
        lo, hi = min(lo, threshold), max(hi, threshold)
    span = (hi - lo) or 1.0
    top = max((c for _, c in bins), default=1) or 1

    def sx(v):
        return ml + pw * (v - lo) / span

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<title>{escape(title)}</title>',
        f'<line class="axis" x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
    ]
    for edge, count in bins:
        if count == 0:
            continue
        h = ph * count / top
        parts.append(
            f'<rect class="bar" x="{sx(edge):.3f}" y="{mt + ph - h:.3f}" '
            f'width="{pw * bin_width / span:.3f}" height="{h:.3f}" fill="#555555">'
            f"<title>[{edge:.3f}, {edge + bin_width:.3f}): {count}</title></rect>"
        )
    for cls, value, colour in (("median", median, "#000000"), ("threshold", threshold, "#bbbbbb")):
        if value is not None:
            x = sx(value)
            parts.append(
                f'<line class="{cls}" x1="{x:.3f}" y1="{mt}" x2="{x:.3f}" y2="{mt + ph}" '
                f'stroke="{colour}" stroke-width="2"><title>{cls} {value:.3f}</title></line>'
            )
    parts.append(f'<text x="{ml}" y="{height - 10}" font-size="12">{lo:.1f}</text>')
    parts.append(f'<text x="{ml + pw - 30}" y="{height - 10}" font-size="12">{hi:.1f}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _geometry_json(geom: Geometry) -> dict:
    polys = [[[list(pt) for pt in ring] for ring in poly] for poly in geom.polygons]
    if len(polys) == 1:
        return {"type": "Polygon", "coordinates": polys[0]}
    return {"type": "MultiPolygon", "coordinates": polys}


def scored_geojson(
    geometries: Mapping[str, Geometry],
    scores: Mapping[str, tuple],
    high: Optional[Mapping[str, bool]] = None,
) -> str:
    """FeatureCollection with ``score``/``raw_score`` (and ``high`` when classified).

    ``scores`` maps geoid -> (raw_score, score); features without a score are skipped.
    """
    features = []
    for geoid in sorted(geometries):
        if geoid not in scores:
            continue
        raw, score = scores[geoid]
        props = {"GEOID": geoid, "raw_score": raw, "score": score}
        if high is not None:
            props["high"] = bool(high.get(geoid, False))
        features.append({"type": "Feature", "properties": props, "geometry": _geometry_json(geometries[geoid])})
    doc = {"type": "FeatureCollection", "features": features}
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def top_places(regions: Sequence[RegionSummary], n: int = 20, min_population: int = 0) -> dict:
    """The two largest-places panels: %HD >= 50 and %HD == 100, by population."""
    eligible = [r for r in regions if r.population >= min_population]

    def panel(pred):
        rows = [r for r in eligible if pred(r)]
        rows.sort(key=lambda r: (-r.population, r.region_id))
        return rows[:n]

    return {
        "ge50": panel(lambda r: r.pct_high >= 50.0),
        "eq100": panel(lambda r: r.n_high == r.n_bg),
    }


def write_top_places_csv(panels: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["panel", "rank", "region_id", "population", "pct_high", "n_bg", "suspect_complete"])
        for name in ("ge50", "eq100"):
            for rank, r in enumerate(panels[name], 1):
                w.writerow([name, rank, r.region_id, r.population, f"{r.pct_high:.3f}", r.n_bg, int(r.suspect_complete)])


def write_scatter_csv(regions: Sequence[RegionSummary], path, min_population: int = 0) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", "population", "log_population", "pct_high"])
        for r in sorted(regions, key=lambda r: r.region_id):
            if r.population >= max(min_population, 1) and r.pct_high > 0:
                w.writerow([r.region_id, r.population, f"{math.log(r.population):.3f}", f"{r.pct_high:.3f}"])


def ranking_table(regions: Sequence[RegionSummary], title: str, with_dispersion: bool = False) -> str:
    cols = ["Region", "N", "Dep", "%HD"] + (["Disp"] if with_dispersion else []) + ["PercPov", "PercWhite", "PercBlack"]
    lines = [title, "  ".join(f"{c:>10}" for c in cols)]

    def f(v):
        return "" if v is None else f"{v:.3f}"

    for r in regions:
        row = [r.region_id, str(r.n_bg), f(r.median_score), f(r.pct_high)]
        if with_dispersion:
            row.append(f(r.dispersion))
        row += [f(r.percpov), f(r.percwht), f(r.percblk)]
        lines.append("  ".join(f"{c:>10}" for c in row))
    return "\n".join(lines) + "\n"


def fit_table(title: str, fits: Sequence[dict], note: str = "") -> str:
    """Coefficients with p-values in parentheses; one column per specification."""
    names: list = []
    for fit in fits:
        for name in fit.get("columns", ()):
            if name not in names:
                names.append(name)
    header = ["", *[f"({i + 1})" for i in range(len(fits))]]
    rows = [header]
    for name in names:
        row = [name]
        for fit in fits:
            if "error" in fit or name not in fit["columns"]:
                row.append("")
                continue
            k = fit["columns"].index(name)
            row.append(f"{fit['coef'][k]:.3f} ({fit['p'][k]:.3f})")
        rows.append(row)
    r2_label = "Pseudo-R2" if any(f.get("model") == "Logistic" or "pseudo_r2" in f for f in fits) else "R2"
    rows.append([r2_label] + ["" if "error" in f else f"{f.get('r2', f.get('pseudo_r2')):.3f}" for f in fits])
    rows.append(["N"] + ["" if "error" in f else str(f["n"]) for f in fits])
    errs = [f"({i + 1}) {f['error']}" for i, f in enumerate(fits) if "error" in f]
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = [title] + ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows]
    if note:
        lines.append(note)
    lines += [f"failed: {e}" for e in errs]
    return "\n".join(lines) + "\n"
