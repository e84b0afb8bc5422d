"""Classical tests: ADF unit root, Welch t, Mann-Whitney U, Anderson-Darling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import log_ndtr, ndtr, stdtr

from .errors import DegenerateInput, EmptyInput, SeriesTooShort, SingularDesign


@dataclass
class TestResult:
    __test__ = False  # keep pytest from collecting this class

    name: str
    statistic: float
    p_value: float
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {"name": self.name, "statistic": self.statistic,
                "p_value": self.p_value, "extra": self.extra}


# MacKinnon (1994) response surfaces for the single-series Dickey-Fuller tau,
# p = Phi(sum_k c_k * tau**k). Left of tau_star the "small p" polynomial
# applies, right of it the "large p" one; outside [tau_min, tau_max] the
# p-value is 0 or 1.
_MACKINNON = {
    "c": {
        "tau_star": -1.61, "tau_min": -18.83, "tau_max": 2.74,
        "small": (2.1659, 1.4412, 3.8269e-2),
        "large": (1.7339, 9.3202e-1, -1.2745e-1, -1.0368e-2),
    },
    "ct": {
        "tau_star": -2.89, "tau_min": -16.18, "tau_max": 0.7,
        "small": (3.2512, 1.6047, 4.9588e-2),
        "large": (2.5261, 6.1654e-1, -3.7956e-1, -6.0285e-2),
    },
}


def mackinnon_p(tau, regression="ct"):
    t = _MACKINNON[regression]
    if tau > t["tau_max"]:
        return 1.0
    if tau < t["tau_min"]:
        return 0.0
    coef = t["small"] if tau <= t["tau_star"] else t["large"]
    return float(ndtr(sum(c * tau**k for k, c in enumerate(coef))))


def _ols(y, X):
    """Least squares with a rank check; returns (beta, ssr, cov_beta)."""
    n, k = X.shape
    if np.linalg.matrix_rank(X) < k:
        raise SingularDesign("ADF design matrix is rank deficient")
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    ssr = float(resid @ resid)
    sigma2 = ssr / (n - k)
    cov = sigma2 * np.linalg.inv(X.T @ X)
    return beta, ssr, cov


def _adf_design(x, lags, nobs, regression):
    """Rows for the last ``nobs`` differences with ``lags`` lagged differences."""
    dx = np.diff(x)
    end = len(dx)
    rows = np.arange(end - nobs, end)
    cols = [np.ones(nobs)]
    if regression == "ct":
        cols.append(np.arange(1, nobs + 1, dtype=float))
    cols.append(x[rows])  # y_{t-1} for dy_t = dx[row]
    for i in range(1, lags + 1):
        cols.append(dx[rows - i])
    return dx[rows], np.column_stack(cols), len(cols) - lags - 1


def adf_test(series, max_lag=None, regression="ct"):
    """Augmented Dickey-Fuller test with AIC lag selection.

    Candidate lag orders 0..max_lag are compared on a common sample; the
    chosen order is then refitted on every usable observation. ``regression``
    is "ct" (constant and trend, the default) or "c" (constant only).
    """
    if regression not in _MACKINNON:
        raise ValueError("regression must be 'c' or 'ct'")
    x = np.asarray(series, dtype=float)
    n = len(x)
    if max_lag is None:
        max_lag = int(math.floor(12.0 * (n / 100.0) ** 0.25))
    if n < 20 + max_lag:
        raise SeriesTooShort(f"need at least {20 + max_lag} observations, got {n}")
    if np.ptp(x) == 0:
        raise DegenerateInput("series is constant")
    common = n - 1 - max_lag
    best = None
    for p in range(max_lag + 1):
        y, X, _ = _adf_design(x, p, common, regression)
        _, ssr, _ = _ols(y, X)
        llf = -common / 2.0 * (math.log(2 * math.pi) + math.log(ssr / common) + 1.0)
        aic = -2.0 * llf + 2.0 * X.shape[1]
        if best is None or aic < best[0]:
            best = (aic, p)
    lag = best[1]
    y, X, gcol = _adf_design(x, lag, n - 1 - lag, regression)
    beta, _, cov = _ols(y, X)
    stat = float(beta[gcol] / math.sqrt(cov[gcol, gcol]))
    return TestResult("adf", stat, mackinnon_p(stat, regression),
                      {"lag": lag, "nobs": int(len(y)), "regression": regression,
                       "max_lag": max_lag})


def welch_t_test(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise EmptyInput("each sample needs at least two values")
    va = a.var(ddof=1) / len(a)
    vb = b.var(ddof=1) / len(b)
    diff = a.mean() - b.mean()
    se2 = va + vb
    if se2 == 0:
        if diff == 0:
            raise DegenerateInput("both samples constant and equal")
        t = math.copysign(math.inf, diff)
        return TestResult("welch_t", t, 0.0, {"df": float(len(a) + len(b) - 2)})
    t = diff / math.sqrt(se2)
    df = se2**2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))
    p = float(min(1.0, 2.0 * stdtr(df, -abs(t))))
    return TestResult("welch_t", float(t), p, {"df": float(df)})


def midranks(values):
    """Ranks starting at 1 with ties given the mean of their positions."""
    v = np.asarray(values, dtype=float)
    order = np.argsort(v, kind="mergesort")
    sv = v[order]
    ranks = np.empty(len(v))
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


@lru_cache(maxsize=None)
def _u_counts(n1, n2):
    """Number of arrangements giving each U in 0..n1*n2 (no ties)."""
    # f[i][j] is the count vector for sizes (i, j)
    prev = [np.ones(1, dtype=object)] + [None] * n2
    for j in range(1, n2 + 1):
        prev[j] = np.ones(1, dtype=object)
    for i in range(1, n1 + 1):
        cur = [np.ones(1, dtype=object)] + [None] * n2
        for j in range(1, n2 + 1):
            # the largest value belongs to sample 1 (adds j to U) or sample 2
            a = prev[j]
            b = cur[j - 1]
            out = np.zeros(i * j + 1, dtype=object)
            out[j:j + len(a)] += a
            out[:len(b)] += b
            cur[j] = out
        prev = cur
    return prev[n2]


def mann_whitney_u(a, b):
    """Two-sided Mann-Whitney U; ``statistic`` is the U of the first sample."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n1, n2 = len(a), len(b)
    if n1 < 1 or n2 < 1:
        raise EmptyInput("both samples must be non-empty")
    ranks = midranks(np.concatenate([a, b]))
    u1 = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    _, tie_counts = np.unique(np.concatenate([a, b]), return_counts=True)
    ties = bool((tie_counts > 1).any())
    extra = {"u_second": n1 * n2 - u1}
    if not ties and n1 * n2 <= 400:
        counts = _u_counts(n1, n2)
        total = sum(counts)
        u = int(round(u1))
        lower = sum(counts[:u + 1]) / total
        upper = sum(counts[u:]) / total
        p = min(1.0, 2.0 * float(min(lower, upper)))
        extra["method"] = "exact"
        return TestResult("mann_whitney_u", u1, p, extra)
    n = n1 + n2
    mu = n1 * n2 / 2.0
    tie_term = float(((tie_counts**3) - tie_counts).sum()) / (n * (n - 1))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    extra["method"] = "normal"
    if var <= 0:
        return TestResult("mann_whitney_u", u1, 1.0, extra)
    z = max(abs(u1 - mu) - 0.5, 0.0) / math.sqrt(var)
    p = min(1.0, 2.0 * float(ndtr(-z)))
    extra["z"] = z
    return TestResult("mann_whitney_u", u1, p, extra)


def anderson_darling_p(a2_star):
    """Case-3 (mean and variance estimated) p-value approximation."""
    z = a2_star
    if z >= 0.6:
        p = math.exp(1.2937 - 5.709 * z + 0.0186 * z * z)
    elif z >= 0.34:
        p = math.exp(0.9177 - 4.279 * z - 1.38 * z * z)
    elif z >= 0.2:
        p = 1.0 - math.exp(-8.318 + 42.796 * z - 59.938 * z * z)
    else:
        p = 1.0 - math.exp(-13.436 + 101.14 * z - 223.73 * z * z)
    return min(1.0, max(0.0, p))


def anderson_darling_normal(x):
    """Anderson-Darling normality test with estimated mean and variance.

    ``statistic`` is the raw A^2; ``extra["adjusted"]`` is
    A^2 (1 + 0.75/n + 2.25/n^2), which is compared with 0.752 for a 5% test.
    """
    x = np.sort(np.asarray(x, dtype=float))
    n = len(x)
    if n < 8:
        raise SeriesTooShort("Anderson-Darling needs at least 8 values")
    s = x.std(ddof=1)
    if s == 0:
        raise DegenerateInput("zero variance")
    w = (x - x.mean()) / s
    i = np.arange(1, n + 1)
    a2 = -n - np.sum((2 * i - 1) * (log_ndtr(w) + log_ndtr(-w[::-1]))) / n
    adj = a2 * (1 + 0.75 / n + 2.25 / n**2)
    return TestResult("anderson_darling", float(a2), anderson_darling_p(adj),
                      {"adjusted": float(adj), "critical_5pct": 0.752,
                       "reject_5pct": bool(adj > 0.752)})


def trailing_mean(series, window):
    """Means of each full trailing window; element k covers positions k..k+window-1."""
    x = np.asarray(series, dtype=float)
    if window < 1 or window > len(x):
        raise ValueError(f"window must lie in [1, {len(x)}]")
    c = np.concatenate([[0.0], np.cumsum(x)])
    return (c[window:] - c[:-window]) / window
