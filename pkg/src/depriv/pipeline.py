"""Pipeline stages with file handoffs: score -> classify -> dispersion -> regress -> report.

Each stage reads its inputs from the config and the output directory, writes
its artifacts there, and returns a small summary dict. Outputs are
deterministic: identical inputs give byte-identical files for any worker count.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from pathlib import Path

from . import aggregate, index, ingest, report, spatial, stats
from .aggregate import Group, SweepDirection, ThresholdSpec
from .config import RunConfig
from .errors import ConfigError, DeprivError, DeprivWarning, EmptyInputError, InputIOError, RegionError
from .model import RegionKind, ScoredBlockGroup

log = logging.getLogger(__name__)

SCORES = "scores.csv"
WEIGHTS = "weights.json"
QUARANTINE = "quarantine.jsonl"
CLASSIFIED = "classified.csv"
THRESHOLD = "threshold.json"
REGIONS = {RegionKind.PLACE: "regions_place.csv", RegionKind.STATE: "regions_state.csv", RegionKind.CUSTOM_CITY: "regions_city.csv"}
SUSPECT = "suspect_places.csv"
ADJACENCY = "adjacency.csv"
DISPERSION_FLAGS = "dispersion_flags.csv"
FITS_JSON = "fits.json"
FITS_TXT = "fits.txt"

PCT_UNITS_NOTE = "%HD enters regressions in percent units (0-100)."


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_dataset(cfg: RunConfig, with_geometry: bool = False) -> ingest.Dataset:
    if not cfg.attributes:
        raise ConfigError("MISSING_FILE", "no attributes CSV configured", key="attributes")
    schema = ingest.ColumnSchema.load(cfg.schema) if cfg.schema else ingest.DEFAULT_SCHEMA
    ds = ingest.parse_attributes_csv(cfg.attributes, schema, include_noncontiguous=cfg.include_noncontiguous)
    if cfg.place_crosswalk:
        ds = ingest.apply_place_crosswalk(ds, cfg.place_crosswalk)
    if with_geometry:
        if not cfg.geometry:
            raise ConfigError("MISSING_FILE", "no geometry GeoJSON configured", key="geometry")
        ds = ingest.join(ds, ingest.parse_geometry_geojson(cfg.geometry, cfg.geoid_property))
    return ds


def _city_membership(cfg: RunConfig):
    if not cfg.city_membership:
        return None
    with open(cfg.city_membership, encoding="utf-8-sig", newline="") as fh:
        return {row["geoid"].strip(): row["city_id"].strip() for row in csv.DictReader(fh)}


def write_scores(rows, path) -> None:
    """``rows``: ``(geoid, raw, score)``; full float precision so later stages lose nothing."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["geoid", "raw_score", "score"])
        for geoid, raw, score in rows:
            w.writerow([geoid, repr(float(raw)), repr(float(score))])


def read_scores(path) -> dict:
    """geoid -> (raw_score, score)."""
    path = Path(path)
    if not path.exists():
        raise InputIOError("MISSING_STAGE_OUTPUT", f"{path} not found; run the earlier stage first")
    with open(path, encoding="utf-8", newline="") as fh:
        return {row["geoid"]: (float(row["raw_score"]), float(row["score"])) for row in csv.DictReader(fh)}


def read_classified(path) -> list:
    path = Path(path)
    if not path.exists():
        raise InputIOError("MISSING_STAGE_OUTPUT", f"{path} not found; run classify first")
    with open(path, encoding="utf-8", newline="") as fh:
        return [
            ScoredBlockGroup(row["geoid"], float(row["raw_score"]), float(row["score"]), row["high"] == "1")
            for row in csv.DictReader(fh)
        ]


# --- score ---------------------------------------------------------------------


def cmd_score(cfg: RunConfig) -> dict:
    out = _out(cfg)
    ds = load_dataset(cfg)
    ingest.write_quarantine_jsonl(ds.quarantine, out / QUARANTINE)
    if not ds.records:
        raise EmptyInputError("EMPTY_INPUT", f"{cfg.attributes} has no valid block groups")
    pca = None
    constants = None
    if cfg.weights == "file":
        weights, constants = index.read_weight_file(cfg.weights_file)
    else:
        sd_stats = index.compute_sd_stats(ds.records, cfg.workers)
        if cfg.weights == "sd":
            weights = index.sd_weights(sd_stats)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("always", DeprivWarning)
                pca = index.pca_weights(ds.records, cfg.workers)
            weights = index.pca_weight_vector(pca, sd_stats)
    raw = index.raw_scores(ds.records, weights, cfg.workers)
    rescaled, constants = index.rescale_0_100([s for _, s in raw], constants)
    write_scores(((g, r, s) for (g, r), s in zip(raw, rescaled)), out / SCORES)
    index.write_weight_file(out / WEIGHTS, weights, constants, pca)
    return {
        "n_scored": len(raw),
        "n_quarantined": len(ds.quarantine),
        "quarantine": ds.reason_counts(),
        "weights": list(weights.w),
        "scheme": weights.scheme.value,
    }


# --- classify -----------------------------------------------------------------


def _region_summaries(cfg, records, classified, dispersion=None):
    overrides = ingest.parse_place_table(cfg.place_table) if cfg.place_table else None
    result = {
        RegionKind.PLACE: aggregate.pct_high_by_region(records, classified, RegionKind.PLACE, overrides, dispersion),
        RegionKind.STATE: aggregate.pct_high_by_region(records, classified, RegionKind.STATE),
    }
    membership = _city_membership(cfg)
    if membership is not None:
        result[RegionKind.CUSTOM_CITY] = aggregate.pct_high_by_region(
            records, classified, RegionKind.CUSTOM_CITY, None, dispersion, membership
        )
    return result


def _write_regions(out: Path, summaries: dict) -> None:
    for kind, rows in summaries.items():
        aggregate.write_region_csv(rows, out / REGIONS[kind])
    with open(out / SUSPECT, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", "region_kind", "n_bg", "population"])
        for kind in (RegionKind.PLACE, RegionKind.CUSTOM_CITY):
            for s in sorted(summaries.get(kind, ()), key=lambda s: s.region_id):
                if s.suspect_complete:
                    w.writerow([s.region_id, kind.value, s.n_bg, s.population])


def cmd_classify(cfg: RunConfig) -> dict:
    out = _out(cfg)
    scores = read_scores(out / SCORES)
    ds = load_dataset(cfg)
    scored = [ScoredBlockGroup(g, raw, s) for g, (raw, s) in sorted(scores.items())]
    spec = ThresholdSpec.parse(cfg.threshold)
    threshold = aggregate.resolve_threshold(spec, scored, ds.records)
    classified = aggregate.classify_high(scored, threshold)
    with open(out / CLASSIFIED, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["geoid", "raw_score", "score", "high"])
        for s in classified:
            w.writerow([s.geoid, repr(s.raw_score), repr(s.score), int(s.high_deprivation)])
    records = [r for r in ds.records if r.geoid in scores]
    summaries = _region_summaries(cfg, records, classified)
    _write_regions(out, summaries)
    n_high = aggregate.count_high(classified)
    info = {
        "threshold_spec": str(spec),
        "threshold": threshold,
        "n_total": len(classified),
        "n_high": n_high,
        "pct_high": 100.0 * n_high / len(classified) if classified else 0.0,
        "by_state": {s.region_id: s.n_high for s in sorted(summaries[RegionKind.STATE], key=lambda s: s.region_id)},
    }
    _dump_json(info, out / THRESHOLD)
    return info


# --- dispersion --------------------------------------------------------------------


def cmd_dispersion(cfg: RunConfig) -> dict:
    out = _out(cfg)
    classified = read_classified(out / CLASSIFIED)
    ds = load_dataset(cfg, with_geometry=True)
    geoms = ds.geometries or {}
    graph = spatial.build_adjacency(geoms, spatial.SnapGrid(cfg.snap_precision), cfg.contiguity, cfg.workers)
    spatial.write_adjacency_csv(graph, out / ADJACENCY)
    high = {s.geoid: s.high_deprivation for s in classified}
    records = [r for r in ds.records if r.geoid in high]
    regions: dict = {}
    for r in records:
        if r.place_id:
            regions.setdefault(r.place_id, []).append(r.geoid)
    results = spatial.dispersion_by_region(regions, high, graph, cfg.within_city_only)
    membership = _city_membership(cfg)
    if membership is not None:
        cities: dict = {}
        for r in records:
            if membership.get(r.geoid):
                cities.setdefault(membership[r.geoid], []).append(r.geoid)
        city_results = spatial.dispersion_by_region(cities, high, graph, cfg.within_city_only)
    else:
        city_results = {}
    missing = sorted(rid for rid, res in {**results, **city_results}.items() if res.value is None)
    if missing:
        log.warning("%d regions lack geometry; their dispersion is absent", len(missing))
    with open(out / DISPERSION_FLAGS, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", "dispersion", "flag", "n_low", "n_isolated"])
        for rid, res in sorted({**results, **city_results}.items()):
            w.writerow([rid, "" if res.value is None else f"{res.value:.3f}", res.flag or "", res.n_low, res.n_isolated])
    disp = {rid: res.value for rid, res in results.items()}
    disp.update({rid: res.value for rid, res in city_results.items()})
    _write_regions(out, _region_summaries(cfg, records, classified, disp))
    return {
        "n_nodes": len(graph.nodes),
        "n_edges": len(graph.edges),
        "n_regions": len(results) + len(city_results),
        "missing_geometry": missing,
    }


# --- regress ------------------------------------------------------------------


def _fit_report(fit, response, dropped) -> dict:
    reasons: dict = {}
    for _, reason in dropped:
        reasons[reason] = reasons.get(reason, 0) + 1
    rep = {
        "model": fit.model.value,
        "response": response.value,
        "columns": list(fit.names),
        "coef": list(fit.coef),
        "se": list(fit.se),
        "p": list(fit.p_values),
        "n": fit.n_obs,
        "dropped": dict(sorted(reasons.items())),
        "converged": fit.converged,
        "warnings": list(fit.warnings),
    }
    if fit.model.value == "OLS":
        rep["r2"] = fit.r2
        rep["r2_adj"] = fit.r2_adj
    else:
        rep["pseudo_r2"] = fit.r2
    return rep


def run_specs(regions, specs, response, logistic: bool, cov_type: str = "HC1") -> list:
    """Fit each specification independently; one failure never aborts the rest."""
    reports = []
    for cols in specs:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DeprivWarning)
                design, dropped = stats.build_design(regions, cols, response)
                fit = stats.logistic_fit(design) if logistic else stats.ols_fit(design, cov_type)
            reports.append(_fit_report(fit, stats.Response(response), dropped))
        except (DeprivError, ValueError) as exc:
            code = getattr(exc, "code", type(exc).__name__)
            log.warning("spec %s failed: %s", cols, exc)
            reports.append(
                {"columns": ["Intercept"] + [stats.REGRESSORS[c] for c in cols], "error": code, "message": str(exc)}
            )
    return reports


def cmd_regress(cfg: RunConfig) -> dict:
    out = _out(cfg)
    path = out / REGIONS[RegionKind.PLACE]
    if not path.exists():
        raise InputIOError("MISSING_STAGE_OUTPUT", f"{path} not found; run classify first")
    regions = aggregate.read_region_csv(path)
    places = [r for r in regions if r.population >= cfg.min_place_population]
    nonzero = [r for r in places if r.pct_high > 0]
    large = [r for r in regions if r.population >= cfg.large_city_population]
    R = stats.Response
    models = {
        "logistic_places": run_specs(places, stats.PCT_HD_SPECS, R.HD_POSITIVE, True),
        "ols_nonzero_places": run_specs(nonzero, stats.PCT_HD_SPECS, R.PCT_HD, False, cfg.cov_type),
        "ols_large_cities": run_specs(large, stats.PCT_HD_SPECS, R.PCT_HD, False, cfg.cov_type),
        "ols_large_cities_dispersion": run_specs(large, stats.DISPERSION_SPECS, R.DISPERSION, False, cfg.cov_type),
    }
    payload = {"note": PCT_UNITS_NOTE, "cov_type": cfg.cov_type, "models": models}
    _dump_json(payload, out / FITS_JSON)
    titles = {
        "logistic_places": "Logistic regression, places (DV = any high-deprivation block group)",
        "ols_nonzero_places": "OLS, places where %HD > 0 (DV = %HD)",
        "ols_large_cities": "OLS, large cities (DV = %HD)",
        "ols_large_cities_dispersion": "OLS, large cities (DV = Dispersion)",
    }
    text = [PCT_UNITS_NOTE, ""]
    for key, fits in models.items():
        note = "p-values in parentheses." if key.startswith("logistic") else f"p-values from {cfg.cov_type} robust SEs."
        text.append(report.fit_table(titles[key], fits, note))
    (out / FITS_TXT).write_text("\n".join(text), encoding="utf-8")
    return {k: sum(1 for f in v if "error" not in f) for k, v in models.items()}


# --- report -------------------------------------------------------------------


def _stats_dict(s: aggregate.SummaryStats) -> dict:
    return {"n": s.n, "min": s.min, "mean": s.mean, "median": s.median, "max": s.max, "sd": s.sd}


def cmd_report(cfg: RunConfig) -> dict:
    out = _out(cfg)
    notes = []

    def skip(msg):
        log.warning(msg)
        notes.append(msg)

    scores = read_scores(out / SCORES) if (out / SCORES).exists() else None
    classified = read_classified(out / CLASSIFIED) if (out / CLASSIFIED).exists() else None
    regions_path = out / REGIONS[RegionKind.PLACE]
    places = aggregate.read_region_csv(regions_path) if regions_path.exists() else None
    threshold = None
    if (out / THRESHOLD).exists():
        threshold = json.loads((out / THRESHOLD).read_text(encoding="utf-8"))["threshold"]
    ds = None
    if cfg.attributes:
        ds = load_dataset(cfg, with_geometry=bool(cfg.geometry))

    written = []
    if scores is None:
        skip(f"{SCORES} missing: histogram, summary, GeoJSON and sweeps skipped")
    else:
        values = [s for _, s in scores.values()]
        bins = aggregate.histogram(values, cfg.bin_width)
        med = aggregate.region_median(values)
        (out / "histogram.svg").write_text(
            report.histogram_svg(bins, cfg.bin_width, threshold=threshold, median=med), encoding="utf-8"
        )
        written.append("histogram.svg")
        summary = {"All": _stats_dict(aggregate.summary_stats(values))}
        if places is not None and ds is not None:
            large = {r.region_id for r in places if r.population >= cfg.large_city_population}
            in_large = [scores[r.geoid][1] for r in ds.records if r.place_id in large and r.geoid in scores]
            if in_large:
                summary["High Pop."] = _stats_dict(aggregate.summary_stats(in_large))
        summary["histogram"] = [[edge, count] for edge, count in bins]
        _dump_json(summary, out / "summary.json")
        written.append("summary.json")

        if ds is None:
            skip("no attributes configured: sweeps and variants skipped")
        else:
            score_only = {g: s for g, (_, s) in scores.items()}
            for group in Group:
                pts = aggregate.cumulative_group_sweep(
                    ds.records, score_only, group, cfg.sweep_step, SweepDirection(cfg.sweep_direction)
                )
                name = f"sweep_{group.value.lower()}.csv"
                with open(out / name, "w", encoding="utf-8", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(["t", "n", "median", "sd", "pop_share"])
                    for p in pts:
                        w.writerow(
                            [
                                f"{p.t:.3f}",
                                p.n,
                                "" if p.median is None else f"{p.median:.3f}",
                                "" if p.sd is None else f"{p.sd:.3f}",
                                "" if math.isnan(p.pop_share) else f"{p.pop_share:.3f}",
                            ]
                        )
                written.append(name)
            if ds.geometries:
                high = None
                if classified is None:
                    skip(f"{CLASSIFIED} missing: GeoJSON written without 'high'")
                else:
                    high = {s.geoid: s.high_deprivation for s in classified}
                (out / "scored.geojson").write_text(report.scored_geojson(ds.geometries, scores, high), encoding="utf-8")
                written.append("scored.geojson")
            else:
                skip("no geometry configured: GeoJSON skipped")
            if cfg.place_table and places is not None and (out / WEIGHTS).exists():
                weights, constants = index.read_weight_file(out / WEIGHTS)
                large = [r.region_id for r in places if r.population >= cfg.large_city_population]
                try:
                    var = index.city_variants(
                        ds.records, score_only, weights, constants, ingest.parse_place_table(cfg.place_table), large
                    )
                    _dump_json(
                        {
                            "order": ["city_weights", "national_weights", "place"],
                            "cities": list(var.cities),
                            "city_weights": list(var.city_weights),
                            "national_weights": list(var.national),
                            "place": list(var.place),
                            "excluded": [list(e) for e in var.excluded],
                            "corr": None if var.corr is None else var.corr.tolist(),
                        },
                        out / "variants.json",
                    )
                    written.append("variants.json")
                except DeprivError as exc:
                    skip(f"variant comparison failed: {exc}")

    if places is None:
        skip(f"{REGIONS[RegionKind.PLACE]} missing: ranking tables skipped")
    else:
        panels = report.top_places(places, 20, cfg.min_place_population)
        report.write_top_places_csv(panels, out / "top_places.csv")
        report.write_scatter_csv(places, out / "places_scatter.csv", cfg.min_place_population)
        large = [r for r in places if r.population >= cfg.large_city_population]
        text = [report.ranking_table(large, "Large cities", with_dispersion=True)]
        state_path = out / REGIONS[RegionKind.STATE]
        if state_path.exists():
            text.append(report.ranking_table(aggregate.read_region_csv(state_path), "States ranked by %HD"))
        (out / "rankings.txt").write_text("\n".join(text), encoding="utf-8")
        written += ["top_places.csv", "places_scatter.csv", "rankings.txt"]
    return {"written": written, "warnings": notes}


def cmd_fetch(cfg: RunConfig) -> dict:
    paths = ingest.fetch_acs(
        cfg.fetch_year_span, cfg.fetch_variables, cfg.fetch_states, cfg.fetch_endpoint, cfg.fetch_dir
    )
    return {"written": [str(p) for p in paths]}


STAGES = {
    "score": cmd_score,
    "classify": cmd_classify,
    "dispersion": cmd_dispersion,
    "regress": cmd_regress,
    "report": cmd_report,
    "fetch": cmd_fetch,
}
