"""Deprivation index: weighting schemes, raw scores, and 0-100 rescaling."""

from __future__ import annotations

import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import reduce
from .errors import DegenerateError, DeprivWarning, InputIOError, NumericError, ParseError
from .model import VARIABLES, BlockGroupRecord, WeightScheme, WeightVector

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SdStats:
    sds: tuple
    n: int


@dataclass(frozen=True)
class PcaResult:
    loadings: tuple
    explained_share: float
    sign_flipped: bool
    eigenvalues: tuple = ()
    degenerate: bool = False


@dataclass(frozen=True)
class RescaleConstants:
    raw_min: float
    raw_max: float

    def apply(self, raw: float) -> float:
        return (raw - self.raw_min) / (self.raw_max - self.raw_min) * 100.0


def component_matrix(records: Sequence[BlockGroupRecord]) -> np.ndarray:
    return np.array([r.components for r in records], dtype=np.float64).reshape(-1, 4)


def _weighting_rows(records) -> np.ndarray:
    return component_matrix([r for r in records if not r.zero_pop])


def compute_sd_stats(records: Sequence[BlockGroupRecord], workers: int = 1) -> SdStats:
    """Per-variable population SDs over records with non-zero population."""
    x = _weighting_rows(records)
    if x.shape[0] < 2:
        raise DegenerateError("INSUFFICIENT_DATA", f"need >= 2 populated records, got {x.shape[0]}")
    sds = []
    for k, name in enumerate(VARIABLES):
        col = x[:, k]
        if col.min() == col.max():
            raise DegenerateError("DEGENERATE_VARIANCE", f"{name} is constant", variable=name)
        sds.append(reduce.population_sd(col, workers))
    return SdStats(tuple(sds), int(x.shape[0]))


def sd_weights(stats: SdStats) -> WeightVector:
    return WeightVector(tuple(1.0 / s for s in stats.sds), WeightScheme.INVERSE_SD, tuple(stats.sds))


def correlation_matrix(x: np.ndarray, workers: int = 1) -> np.ndarray:
    n, p = x.shape
    means = [reduce.mean(x[:, k], workers) for k in range(p)]
    z = x - np.array(means)
    cov = np.empty((p, p))
    for i in range(p):
        for j in range(i, p):
            cov[i, j] = cov[j, i] = reduce.pairwise_sum(z[:, i] * z[:, j], workers) / n
    d = np.sqrt(np.diag(cov))
    if not np.all(np.isfinite(cov)) or np.any(d == 0):
        raise DegenerateError("DEGENERATE_VARIANCE", "covariance matrix is singular or non-finite")
    return cov / np.outer(d, d)


def jacobi_eigh(a: np.ndarray, max_sweeps: int = 10_000, tol: float = 1e-14):
    """Eigen-decomposition of a small symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` sorted by descending eigenvalue;
    eigenvectors are the columns of the second array.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    scale = max(np.abs(a).max(), np.finfo(float).tiny)
    for _ in range(max_sweeps):
        off = math.sqrt(sum(a[i, j] ** 2 for i in range(n) for j in range(n) if i != j))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(diff) > 1e150 * abs(apq):
                    # theta would overflow; t ~ 1/(2 theta)
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                a[p, q] = a[q, p] = 0.0
                v = v @ rot
    else:
        raise NumericError("NO_CONVERGENCE", f"Jacobi did not converge in {max_sweeps} sweeps")
    vals = np.diag(a).copy()
    order = np.argsort(-vals, kind="stable")
    return vals[order], v[:, order]


def normalize_sign(vec: np.ndarray) -> tuple:
    """Force the first non-zero component (percpov when present) positive."""
    vec = vec / np.linalg.norm(vec)
    nz = np.flatnonzero(np.abs(vec) > 1e-15)
    flipped = bool(nz.size and vec[nz[0]] < 0)
    return (-vec if flipped else vec), flipped


def pca_weights(records: Sequence[BlockGroupRecord], workers: int = 1) -> PcaResult:
    """First principal component of the four standardized index variables."""
    x = _weighting_rows(records)
    if x.shape[0] < 5:
        raise DegenerateError("INSUFFICIENT_DATA", f"PCA needs >= 5 populated records, got {x.shape[0]}")
    return pca_from_correlation(correlation_matrix(x, workers))


def pca_from_correlation(corr: np.ndarray) -> PcaResult:
    vals, vecs = jacobi_eigh(corr)
    loadings, flipped = normalize_sign(vecs[:, 0])
    degenerate = bool(abs(vals[0] - vals[1]) <= 1e-9 * max(abs(vals[0]), 1.0))
    if degenerate:
        warnings.warn(
            DeprivWarning("DEGENERATE_EIGENSPACE", "leading eigenvalue is repeated; loadings are not unique"),
            stacklevel=2,
        )
    return PcaResult(
        tuple(float(v) for v in loadings),
        float(vals[0] / vals.sum()),
        flipped,
        tuple(float(v) for v in vals),
        degenerate,
    )


def pca_weight_vector(pca: PcaResult, stats: SdStats) -> WeightVector:
    """Weights on raw percentages reproducing the absolute-loading component score.

    ``|l_k| * z_k`` differs from ``(|l_k| / sd_k) * x_k`` by a constant, which
    min-max rescaling removes.
    """
    w = tuple(abs(l) / s for l, s in zip(pca.loadings, stats.sds))
    return WeightVector(w, WeightScheme.PCA, tuple(stats.sds))


def _score_block(x: np.ndarray, w: tuple) -> np.ndarray:
    # Fixed left-to-right evaluation order keeps results independent of chunking.
    return ((w[0] * x[:, 0] + w[1] * x[:, 1]) + w[2] * x[:, 2]) + w[3] * x[:, 3]


def score_matrix(x: np.ndarray, weights: WeightVector, workers: int = 1, chunk: int = 65_536) -> np.ndarray:
    if not all(math.isfinite(v) for v in weights.w):
        raise DegenerateError("NON_FINITE_WEIGHTS", str(weights.w))
    if workers <= 1 or x.shape[0] <= chunk:
        return _score_block(x, weights.w)
    parts = [x[s : s + chunk] for s in range(0, x.shape[0], chunk)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return np.concatenate(list(pool.map(lambda b: _score_block(b, weights.w), parts)))


def raw_scores(records: Sequence[BlockGroupRecord], weights: WeightVector, workers: int = 1) -> list:
    """``[(geoid, sum_k w_k * x_k)]`` sorted by geoid."""
    ordered = sorted(records, key=lambda r: r.geoid)
    vals = score_matrix(component_matrix(ordered), weights, workers)
    return [(r.geoid, float(v)) for r, v in zip(ordered, vals)]


def place_level_score(values: Mapping[str, float], weights: WeightVector) -> float:
    x = np.array([[values[v] for v in VARIABLES]], dtype=np.float64)
    return float(_score_block(x, weights.w)[0])


def rescale_0_100(scores, constants: Optional[RescaleConstants] = None):
    """Min-max map to [0, 100]. Returns ``(rescaled, constants)``.

    Passing ``constants`` reuses an earlier population's min and max.
    """
    s = np.asarray(scores, dtype=np.float64)
    if constants is None:
        if s.size == 0 or s.min() == s.max():
            raise DegenerateError("DEGENERATE_RANGE", "need at least two distinct scores to rescale")
        constants = RescaleConstants(float(s.min()), float(s.max()))
    # Dividing before scaling maps the maximum to exactly 100.
    out = (s - constants.raw_min) / (constants.raw_max - constants.raw_min) * 100.0
    return out, constants


def city_local_weights(records: Sequence[BlockGroupRecord]) -> WeightVector:
    return sd_weights(compute_sd_stats(records))


def variant_correlations(city_weights, national, place) -> np.ndarray:
    """Pearson correlations between the three city-level index variants.

    Inputs are aligned per city; rows/columns follow the argument order.
    """
    from .stats import pearson_corr

    variants = [np.asarray(v, dtype=np.float64) for v in (city_weights, national, place)]
    n = {v.size for v in variants}
    if len(n) != 1 or n.pop() < 3:
        raise DegenerateError("INSUFFICIENT_DATA", "need >= 3 cities with all three variants")
    out = np.eye(3)
    for i in range(3):
        for j in range(i + 1, 3):
            out[i, j] = out[j, i] = pearson_corr(variants[i], variants[j])
    return out


@dataclass(frozen=True)
class CityVariants:
    cities: tuple
    city_weights: tuple
    national: tuple
    place: tuple
    excluded: tuple
    corr: Optional[np.ndarray] = None


def city_variants(
    records: Sequence[BlockGroupRecord],
    national_scores: Mapping[str, float],
    weights: WeightVector,
    constants: RescaleConstants,
    place_table: Mapping[str, dict],
    cities: Sequence[str],
) -> CityVariants:
    """The three per-city index variants compared across large cities.

    - city weights: median raw score under SD weights estimated within the city
    - national weights: median of the nationally rescaled scores
    - place: the place-level record scored with national weights and constants
    """
    members: dict = {}
    for r in records:
        if r.place_id:
            members.setdefault(r.place_id, []).append(r)
    kept, a, b, c, excluded = [], [], [], [], []
    for city in sorted(cities):
        recs = members.get(city, [])
        row = place_table.get(city)
        if not recs or row is None or any(row.get(v) is None for v in VARIABLES):
            excluded.append((city, "MISSING_DATA"))
            continue
        try:
            local = city_local_weights(recs)
        except DegenerateError as exc:
            log.warning("city %s excluded from variant comparison: %s", city, exc)
            excluded.append((city, exc.code))
            continue
        local_raw = [s for _, s in raw_scores(recs, local)]
        kept.append(city)
        a.append(float(np.median(local_raw)))
        b.append(float(np.median([national_scores[r.geoid] for r in recs])))
        c.append(constants.apply(place_level_score(row, weights)))
    corr = variant_correlations(a, b, c) if len(kept) >= 3 else None
    return CityVariants(tuple(kept), tuple(a), tuple(b), tuple(c), tuple(excluded), corr)


def write_weight_file(path, weights: WeightVector, constants: RescaleConstants, pca: Optional[PcaResult] = None):
    payload = {
        "scheme": weights.scheme.value,
        "weights": list(weights.w),
        "rescale": {"raw_min": constants.raw_min, "raw_max": constants.raw_max},
    }
    if weights.source_sds is not None:
        payload["source_sds"] = list(weights.source_sds)
    if pca is not None:
        payload["pca"] = {
            "loadings": list(pca.loadings),
            "explained_share": pca.explained_share,
            "sign_flipped": pca.sign_flipped,
        }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_weight_file(path):
    """Returns ``(WeightVector, RescaleConstants or None)``."""
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputIOError("UNREADABLE", f"{path}: {exc}") from exc
    except ValueError as exc:
        raise ParseError("BAD_JSON", f"{path}: {exc}") from exc
    try:
        sds = d.get("source_sds")
        wv = WeightVector(
            tuple(float(x) for x in d["weights"]),
            WeightScheme(d["scheme"]),
            None if sds is None else tuple(float(x) for x in sds),
        )
        resc = d.get("rescale")
        constants = None if resc is None else RescaleConstants(float(resc["raw_min"]), float(resc["raw_max"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError("BAD_WEIGHT_FILE", f"{path}: {exc}") from exc
    return wv, constants
