"""Regression fits (OLS with robust errors, logistic by IRLS), Pearson
correlation, and the tail probabilities behind their p-values."""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import reduce
from .errors import DegenerateError, DeprivWarning, NumericError
from .model import ModelKind, RegionSummary, RegressionFit

# --- distributions -----------------------------------------------------------


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, 10_001):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            return h
    raise NumericError("NO_CONVERGENCE", f"incomplete beta continued fraction a={a} b={b} x={x}")


def betainc(a: float, b: float, x: float, y: float | None = None) -> float:
    """Regularized incomplete beta ``I_x(a, b)``.

    ``y`` is ``1 - x`` when the caller can form it without cancellation.
    """
    if y is None:
        y = 1.0 - x
    if x <= 0.0:
        return 0.0
    if y <= 0.0:
        return 1.0
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log(y)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, y) / b


def tail_probabilities(stat: float, df: float | None = None) -> float:
    """Two-sided p-value: standard normal when ``df`` is None, else Student t."""
    if math.isnan(stat):
        raise NumericError("NAN_STATISTIC", "test statistic is NaN")
    if df is None:
        return math.erfc(abs(stat) / math.sqrt(2.0))
    if df < 1:
        raise NumericError("BAD_DF", f"degrees of freedom must be >= 1, got {df}")
    if math.isinf(stat):
        return 0.0
    t2 = stat * stat
    return betainc(df / 2.0, 0.5, df / (df + t2), t2 / (df + t2))


# --- correlation -------------------------------------------------------------


def pearson_corr(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 3:
        raise DegenerateError("INSUFFICIENT_DATA", "pearson_corr needs two equal-length vectors of >= 3")
    if a.min() == a.max() or b.min() == b.max():
        raise DegenerateError("DEGENERATE_VARIANCE", "correlation with a constant vector")
    da = a - reduce.mean(a)
    db = b - reduce.mean(b)
    r = reduce.pairwise_sum(da * db) / math.sqrt(reduce.pairwise_sum(da * da) * reduce.pairwise_sum(db * db))
    return max(-1.0, min(1.0, r))


# --- design matrices -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    y: np.ndarray
    X: np.ndarray
    names: tuple

    def __post_init__(self):
        y, X = np.asarray(self.y, dtype=np.float64), np.asarray(self.X, dtype=np.float64)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        if X.ndim != 2 or y.shape != (X.shape[0],) or len(self.names) != X.shape[1]:
            raise ValueError("design shapes do not agree")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("design contains absent or non-finite values")
        if X.shape[1] == 0 or not np.all(X[:, 0] == 1.0):
            raise ValueError("first design column must be the intercept")
        if X.shape[0] <= X.shape[1]:
            raise DegenerateError("INSUFFICIENT_DATA", f"need n > p, got n={X.shape[0]} p={X.shape[1]}")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def check_rank(self, tol: float = 1e-10) -> None:
        """Raise SINGULAR_DESIGN unless the centred, unit-scaled X has full column rank."""
        Z = self.X.copy()
        Z[:, 1:] -= Z[:, 1:].mean(axis=0)
        norms = np.linalg.norm(Z, axis=0)
        zero = np.flatnonzero(norms == 0)
        if zero.size:
            name = self.names[zero[0]]
            raise NumericError("SINGULAR_DESIGN", f"column {name!r} is constant", column=name)
        Z /= norms
        _, s, vt = np.linalg.svd(Z, full_matrices=False)
        if s[-1] <= tol:
            name = self.names[int(np.argmax(np.abs(vt[-1])))]
            raise NumericError("SINGULAR_DESIGN", f"column {name!r} is collinear", column=name)


# --- OLS ----------------------------------------------------------------------


def _p_from_ratio(coef: float, se: float, df) -> float:
    if se == 0.0:
        return 0.0 if coef != 0.0 else 1.0
    return tail_probabilities(coef / se, df)


def ols_fit(d: DesignMatrix, cov_type: str = "HC1") -> RegressionFit:
    """Least squares via QR with heteroskedasticity-robust (HC0/HC1) covariance."""
    if cov_type not in ("HC0", "HC1"):
        raise ValueError(f"unknown covariance type {cov_type!r}")
    d.check_rank()
    X, y, n, p = d.X, d.y, d.n, d.p
    q, r = np.linalg.qr(X)
    coef = np.linalg.solve(r, q.T @ y)
    resid = y - X @ coef
    r_inv = np.linalg.inv(r)
    bread = r_inv @ r_inv.T
    meat = X.T @ (X * (resid**2)[:, None])
    cov = bread @ meat @ bread
    if cov_type == "HC1":
        cov *= n / (n - p)
    cov = (cov + cov.T) / 2.0
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    ssr = reduce.pairwise_sum(resid**2)
    sst = reduce.pairwise_sum((y - reduce.mean(y)) ** 2)
    r2 = 1.0 - ssr / sst if sst > 0 else 0.0
    return RegressionFit(
        model=ModelKind.OLS,
        names=tuple(d.names),
        coef=tuple(float(c) for c in coef),
        cov=tuple(tuple(float(v) for v in row) for row in cov),
        p_values=tuple(_p_from_ratio(c, s, n - p) for c, s in zip(coef, se)),
        r2=float(r2),
        n_obs=n,
        converged=True,
        r2_adj=float(1.0 - (1.0 - r2) * (n - 1) / (n - p)),
    )


# --- logistic -----------------------------------------------------------------


def logistic_loglik(beta, X, y) -> float:
    eta = np.asarray(X) @ np.asarray(beta)
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def logistic_score(beta, X, y) -> np.ndarray:
    """Gradient of the log-likelihood."""
    eta = np.asarray(X) @ np.asarray(beta)
    return np.asarray(X).T @ (y - 1.0 / (1.0 + np.exp(-eta)))


def _information(beta, X) -> np.ndarray:
    mu = 1.0 / (1.0 + np.exp(-(X @ beta)))
    return X.T @ (X * (mu * (1.0 - mu))[:, None])


def logistic_fit(d: DesignMatrix, max_iter: int = 100, tol: float = 1e-10, bound: float = 30.0) -> RegressionFit:
    """Maximum likelihood by Newton-Raphson / IRLS, starting from zero."""
    y = d.y
    if not np.all((y == 0) | (y == 1)):
        raise DegenerateError("NON_BINARY_RESPONSE", "logistic response must be 0/1")
    if y.min() == y.max():
        raise DegenerateError("BOTH_CLASSES_REQUIRED", "logistic response has a single class")
    d.check_rank()
    X = d.X
    beta = np.zeros(d.p)
    converged, notes = False, []
    for _ in range(max_iter):
        try:
            step = np.linalg.solve(_information(beta, X), logistic_score(beta, X, y))
        except np.linalg.LinAlgError:
            notes.append("SEPARATION")
            break
        beta = beta + step
        if np.max(np.abs(beta)) > bound:
            notes.append("SEPARATION")
            break
        if np.max(np.abs(step)) < tol:
            converged = True
            break
    if "SEPARATION" in notes:
        warnings.warn(DeprivWarning("SEPARATION", "coefficients diverging; likely complete separation"), stacklevel=2)
    try:
        cov = np.linalg.inv(_information(beta, X))
    except np.linalg.LinAlgError:
        cov = np.full((d.p, d.p), np.inf)
    cov = (cov + cov.T) / 2.0
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    ll = logistic_loglik(beta, X, y)
    n1 = float(y.sum())
    n0 = d.n - n1
    ybar = n1 / d.n
    ll0 = n1 * math.log(ybar) + n0 * math.log1p(-ybar)
    return RegressionFit(
        model=ModelKind.LOGISTIC,
        names=tuple(d.names),
        coef=tuple(float(b) for b in beta),
        cov=tuple(tuple(float(v) for v in row) for row in cov),
        p_values=tuple(_p_from_ratio(b, s, None) if math.isfinite(s) else 1.0 for b, s in zip(beta, se)),
        r2=float(1.0 - ll / ll0),
        n_obs=d.n,
        converged=converged,
        warnings=tuple(notes),
    )


# --- region designs -------------------------------------------------------------


class Response(str, enum.Enum):
    HD_POSITIVE = "HD_POSITIVE"
    PCT_HD = "PCT_HD"
    DISPERSION = "DISPERSION"


REGRESSORS = {
    "percpov": "percpov",
    "log_popdens": "log(popdens)",
    "percblk": "percblk",
    "percwht": "percwht",
}

# Four nested specifications per table column.
PCT_HD_SPECS = (
    ("percpov",),
    ("percpov", "log_popdens"),
    ("percpov", "log_popdens", "percblk"),
    ("percpov", "log_popdens", "percwht"),
)
DISPERSION_SPECS = (
    ("percpov",),
    ("percpov", "log_popdens"),
    ("percpov", "percblk"),
    ("percpov", "percwht"),
)


def build_design(regions: Sequence[RegionSummary], columns: Sequence[str], response: Response):
    """Returns ``(DesignMatrix, dropped)`` where ``dropped`` lists ``(region_id, reason)``."""
    response = Response(response)
    unknown = set(columns) - set(REGRESSORS)
    if unknown:
        raise ValueError(f"unknown regressors {sorted(unknown)}")
    rows, ys, dropped = [], [], []
    for reg in regions:
        if response is Response.HD_POSITIVE:
            yv = 1.0 if reg.pct_high > 0 else 0.0
        elif response is Response.PCT_HD:
            yv = reg.pct_high
        else:
            yv = reg.dispersion
        if yv is None:
            dropped.append((reg.region_id, "MISSING_RESPONSE"))
            continue
        row, reason = [1.0], None
        for c in columns:
            if c == "log_popdens":
                if reg.popdens is None:
                    reason = "MISSING_COVARIATE"
                elif reg.popdens <= 0:
                    reason = "LOG_DOMAIN"
                else:
                    row.append(math.log(reg.popdens))
                    continue
                break
            v = getattr(reg, c)
            if v is None:
                reason = "MISSING_COVARIATE"
                break
            row.append(float(v))
        if reason:
            dropped.append((reg.region_id, reason))
            continue
        rows.append(row)
        ys.append(yv)
    names = ("Intercept",) + tuple(REGRESSORS[c] for c in columns)
    X = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    return DesignMatrix(np.array(ys, dtype=np.float64), X, names), dropped
