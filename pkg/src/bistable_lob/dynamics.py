"""Delay embedding and chaos diagnostics for scalar price series.

Orientation convention used everywhere here: component ``k`` of embedded
point ``i`` is ``series[i + k * delay]``, so the newest value is last.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateInput, NoMatches, NoScalingRegion, NoValidNeighbors, SeriesTooShort


@dataclass(frozen=True)
class EmbeddingSpec:
    dimension: int
    delay: int

    def __post_init__(self):
        if self.dimension < 1 or self.delay < 1:
            raise ValueError("embedding dimension and delay must be >= 1")

    def n_points(self, length):
        return length - (self.dimension - 1) * self.delay


def delay_embed(series, spec):
    x = np.asarray(series, dtype=float)
    n = spec.n_points(len(x))
    if n < 2:
        raise SeriesTooShort(f"series of length {len(x)} too short for {spec}")
    return np.column_stack([x[k * spec.delay: k * spec.delay + n] for k in range(spec.dimension)])


def poincare_points(series, m, tau):
    """2-D projections of the embedded cloud for every coordinate pair j < k."""
    pts = delay_embed(series, EmbeddingSpec(m, tau))
    return {(j, k): pts[:, [j, k]] for j, k in combinations(range(m), 2)}


def acf_delay(series, max_lag=None):
    """First lag at which the autocorrelation drops below 1/e (at least 1)."""
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    n = len(x)
    if max_lag is None:
        max_lag = n // 2
    var = x @ x
    if var == 0:
        return 1
    f = np.fft.rfft(x, 2 * n)
    ac = np.fft.irfft(f * np.conj(f))[:max_lag + 1] / var
    below = np.flatnonzero(ac < 1.0 / math.e)
    return int(below[0]) if below.size else max_lag


# ---------------------------------------------------------------- dimension

@dataclass
class CorrelationCurve:
    radii: np.ndarray
    c_values: np.ndarray
    fitted_slope: Optional[float]
    fit_range: Optional[Tuple[int, int]]
    n_pairs: int = 0


def _pair_distances(pts, theiler):
    """Euclidean distances of all pairs i < j with j - i > theiler."""
    n = len(pts)
    chunks = []
    for i in range(n - theiler - 1):
        d = pts[i + theiler + 1:] - pts[i]
        chunks.append(np.sqrt(np.einsum("ij,ij->i", d, d)))
    if not chunks:
        return np.empty(0)
    return np.concatenate(chunks)


def local_slopes(radii, c_values):
    lr = np.log(radii)
    with np.errstate(divide="ignore"):
        lc = np.log(c_values)
    return np.diff(lc) / np.diff(lr)


def find_scaling_region(radii, c_values, min_points=6, tolerance=0.2):
    """Longest run of >= ``min_points`` radii whose local slopes agree within ``tolerance``.

    Agreement means (max - min) of the run's local slopes is below
    ``tolerance`` times their mean. Returns an inclusive (start, end) radius
    index pair or None; ties go to the smaller radii.
    """
    s = local_slopes(radii, c_values)
    ok = np.isfinite(s) & (c_values[:-1] > 0)
    best = None
    n = len(s)
    for a in range(n):
        if not ok[a]:
            continue
        lo = hi = s[a]
        b = a
        while b + 1 < n and ok[b + 1]:
            lo2, hi2 = min(lo, s[b + 1]), max(hi, s[b + 1])
            mean = s[a:b + 2].mean()
            if mean <= 0 or hi2 - lo2 >= tolerance * mean:
                break
            lo, hi, b = lo2, hi2, b + 1
        # slopes a..b span radii a..b+1
        npts = b - a + 2
        if npts >= min_points and (best is None or npts > best[1] - best[0] + 1):
            best = (a, b + 1)
    return best


def correlation_dimension(series, spec, radii=None, theiler=None, fit_range=None,
                          n_radii=24):
    """Grassberger-Procaccia correlation sum and its scaling slope D2.

    Pairs closer in time than the Theiler window (default: the delay) are
    left out of both the count and the normaliser. Default radii are
    ``n_radii`` log-spaced values between the 1st and 99th percentiles of
    the positive pairwise distances. Raises ``NoScalingRegion`` (carrying the
    curve) when no usable straight stretch exists and ``fit_range`` is None.
    """
    x = np.asarray(series, dtype=float)
    if np.ptp(x) == 0:
        raise DegenerateInput("series is constant")
    pts = delay_embed(x, spec)
    w = spec.delay if theiler is None else int(theiler)
    d = np.sort(_pair_distances(pts, w))
    if d.size == 0:
        raise SeriesTooShort("no pairs outside the Theiler window")
    if radii is None:
        pos = d[d > 0]
        lo, hi = np.percentile(pos, [1, 99])
        radii = np.geomspace(lo, hi, n_radii)
    radii = np.asarray(radii, dtype=float)
    c = np.searchsorted(d, radii, side="left") / d.size
    curve = CorrelationCurve(radii, c, None, None, int(d.size))
    if fit_range is None:
        fit_range = find_scaling_region(radii, c)
        if fit_range is None:
            raise NoScalingRegion("no scaling region found", curve)
    a, b = fit_range
    if b <= a:
        raise ValueError("fit_range must span at least two radii")
    sel = slice(a, b + 1)
    if np.any(c[sel] <= 0):
        raise NoScalingRegion("fit range contains empty correlation sums", curve)
    curve.fitted_slope = float(np.polyfit(np.log(radii[sel]), np.log(c[sel]), 1)[0])
    curve.fit_range = (int(a), int(b))
    return curve


# ------------------------------------------------------------------ entropy

def _templates(x, m, count):
    return np.column_stack([x[k:k + count] for k in range(m)])


def _default_r(x, r):
    if r is None:
        return 0.2 * x.std()
    if r <= 0:
        raise ValueError("tolerance r must be positive")
    return float(r)


def approx_entropy(series, m=2, r=None):
    """ApEn with Chebyshev distance, self-matches counted; r defaults to 0.2*std."""
    x = np.asarray(series, dtype=float)
    if len(x) < m + 2:
        raise SeriesTooShort("series too short for ApEn")
    if np.ptp(x) == 0:
        return 0.0
    r = _default_r(x, r)

    def phi(mm):
        count = len(x) - mm + 1
        t = _templates(x, mm, count)
        tree = cKDTree(t)
        c = tree.query_ball_point(t, r, p=np.inf, return_length=True) / count
        return np.log(c).mean()

    return float(phi(m) - phi(m + 1))


def _match_pairs(t, r):
    tree = cKDTree(t)
    return int(tree.count_neighbors(tree, r, p=np.inf)) - len(t)


def sample_entropy(series, m=2, r=None):
    """SampEn = -ln(A/B) without self-matches; r defaults to 0.2*std."""
    x = np.asarray(series, dtype=float)
    if len(x) < m + 2:
        raise SeriesTooShort("series too short for SampEn")
    if np.ptp(x) == 0:
        return 0.0
    r = _default_r(x, r)
    count = len(x) - m
    b = _match_pairs(_templates(x, m, count), r)
    a = _match_pairs(_templates(x, m + 1, count), r)
    if b == 0 or a == 0:
        raise NoMatches(f"no template matches (A={a}, B={b})")
    return float(-math.log(a / b)) + 0.0  # turn -0.0 into 0.0


def ks_entropy_estimate(series, m=2, r=None):
    """Kolmogorov-Sinai entropy per step, estimated by SampEn."""
    return sample_entropy(series, m, r)


# ---------------------------------------------------------------- Lyapunov

def mean_period(series):
    """Reciprocal of the power-weighted mean frequency (cycles per step), rounded up."""
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    p = np.abs(np.fft.rfft(x)) ** 2
    f = np.fft.rfftfreq(len(x))
    p, f = p[1:], f[1:]
    if p.sum() == 0:
        return None
    mf = (f * p).sum() / p.sum()
    return int(math.ceil(1.0 / mf))


@dataclass
class LyapunovResult:
    lam: float
    divergence_curve: np.ndarray
    fit_window: Tuple[int, int]
    mean_period: int


def _nearest_neighbours(pts, min_sep, chunk=512):
    n = len(pts)
    nn = np.full(n, -1, dtype=np.int64)
    idx = np.arange(n)
    for s in range(0, n, chunk):
        block = pts[s:s + chunk]
        d2 = (block**2).sum(1)[:, None] + (pts**2).sum(1)[None, :] - 2.0 * block @ pts.T
        # only the arg-min is used, so the expanded-square form is accurate enough
        rows = idx[s:s + chunk]
        d2[np.abs(rows[:, None] - idx[None, :]) <= min_sep] = np.inf
        # an identical point has distance zero and so no log divergence
        d2[np.all(block[:, None, :] == pts[None, :, :], axis=2)] = np.inf
        j = np.argmin(d2, axis=1)
        good = np.isfinite(d2[np.arange(len(rows)), j])
        nn[rows[good]] = j[good]
    return nn


def lyapunov_rosenstein(series, spec, mean_period_steps=None, fit_window=None, k_max=None):
    """Largest Lyapunov exponent (per step) by Rosenstein's nearest-neighbour method.

    Each embedded point is paired with its nearest distinct neighbour that
    lies more than ``mean_period_steps`` apart in time; the mean log
    distance of the pairs is tracked ``k`` steps ahead for k = 0..k_max and
    its least-squares slope over ``fit_window`` (inclusive k range, default
    the first third of the curve) is the exponent. Pairs whose distance is
    exactly zero at some k are left out of that k's average.
    """
    x = np.asarray(series, dtype=float)
    pts = delay_embed(x, spec)
    n = len(pts)
    if n < 100:
        raise SeriesTooShort(f"need >= 100 embedded points, got {n}")
    if mean_period_steps is None:
        mean_period_steps = mean_period(x) or spec.delay
    if k_max is None:
        k_max = min(500, n // 10)
    nn = _nearest_neighbours(pts, mean_period_steps)
    valid = np.flatnonzero(nn >= 0)
    if valid.size == 0:
        raise NoValidNeighbors("no admissible nearest neighbours")
    curve = np.full(k_max + 1, np.nan)
    for k in range(k_max + 1):
        i = valid[(valid + k < n) & (nn[valid] + k < n)]
        if i.size == 0:
            break
        d = np.linalg.norm(pts[i + k] - pts[nn[i] + k], axis=1)
        d = d[d > 0]
        if d.size:
            curve[k] = np.log(d).mean()
    if fit_window is None:
        fit_window = (0, max(1, k_max // 3))
    a, b = fit_window
    ks = np.arange(a, b + 1)
    ys = curve[a:b + 1]
    ok = np.isfinite(ys)
    if ok.sum() < 2:
        raise NoValidNeighbors("divergence curve has too few finite points to fit")
    lam = float(np.polyfit(ks[ok], ys[ok], 1)[0])
    return LyapunovResult(lam, curve, (int(a), int(b)), int(mean_period_steps))
