"""Estimators of the boundary price that separates the two terminal branches.

All three work on one price per labelled trajectory, taken at a common
comparison time.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ensemble import Label
from .errors import EmptyInput, OneClassOnly


class Method(enum.Enum):
    CLASSIFICATION_ERROR = "classification_error"
    ENTROPY_MEDIAN = "entropy_median"
    HINGE_MARGIN = "hinge_margin"


@dataclass
class SeparatrixInput:
    values_at_tc: np.ndarray
    labels: Sequence[Label]
    t_c: int

    def __post_init__(self):
        self.values_at_tc = np.asarray(self.values_at_tc, dtype=float)
        self.labels = list(self.labels)
        if len(self.values_at_tc) != len(self.labels):
            raise ValueError("values and labels differ in length")
        bad = [lab for lab in self.labels if lab not in (Label.REACHED_ZERO, Label.POSITIVE)]
        if bad:
            raise ValueError(f"labels must be REACHED_ZERO or POSITIVE, got {bad[0]}")

    @property
    def is_positive(self):
        return np.array([lab == Label.POSITIVE for lab in self.labels], dtype=bool)

    def require_both(self):
        pos = self.is_positive
        if pos.all() or not pos.any():
            raise OneClassOnly("both terminal classes are required")
        return pos

    @classmethod
    def from_ensemble(cls, ens, t_c=None, fraction=0.5):
        """Take prices at ``t_c`` (default: ``comparison_time``) from the determinate runs."""
        keep = [i for i, lab in enumerate(ens.labels) if lab.value != Label.UNDETERMINED]
        if t_c is None:
            t_c = comparison_time([len(ens.trajectories[i]) for i in keep] or [0], fraction)
        values = [ens.trajectories[i].close[t_c] for i in keep]
        return cls(np.array(values), [ens.labels[i].value for i in keep], t_c)


@dataclass
class SeparatrixEstimate:
    value: float
    method: Method
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return {"method": self.method.value, "estimate": self.value, "diagnostics": self.diagnostics}


def comparison_time(trajectory_lengths, fraction=0.5):
    """Floor of ``fraction`` times the median length (0.5 gives half the median)."""
    lengths = np.asarray(trajectory_lengths)
    if lengths.size == 0:
        raise EmptyInput("no trajectory lengths")
    return int(math.floor(fraction * float(np.median(lengths))))


def _errors_at(values, pos, thresholds):
    # Zero-branch runs are expected below the threshold, positive ones above.
    zero_above = (values[~pos][None, :] > thresholds[:, None]).sum(axis=1)
    pos_below = (values[pos][None, :] < thresholds[:, None]).sum(axis=1)
    return (zero_above + pos_below) / len(values)


def separatrix_classification(inp):
    """Midpoint between sorted unique values with the lowest misclassification rate.

    Ties go to the smallest midpoint.
    """
    pos = inp.require_both()
    x = inp.values_at_tc
    u = np.unique(x)
    if u.size == 1:
        mids = u.copy()
    else:
        mids = (u[:-1] + u[1:]) / 2.0
    err = _errors_at(x, pos, mids)
    j = int(np.argmin(err))
    return SeparatrixEstimate(float(mids[j]), Method.CLASSIFICATION_ERROR,
                              {"min_error": float(err[j]), "n_candidates": int(mids.size),
                               "t_c": inp.t_c})


def shannon_entropy_bits(values, num_bins=20):
    counts, _ = np.histogram(values, bins=num_bins)
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log2(p)).sum()) + 0.0


def separatrix_entropy(inp, num_bins=20):
    """Median of all labelled values; the histogram entropy is reported alongside."""
    x = inp.values_at_tc
    x = x[np.isfinite(x)]
    if x.size == 0:
        raise EmptyInput("no finite values")
    if num_bins < 1:
        raise ValueError("num_bins must be positive")
    return SeparatrixEstimate(float(np.median(x)), Method.ENTROPY_MEDIAN,
                              {"entropy_bits": shannon_entropy_bits(x, num_bins),
                               "num_bins": int(num_bins), "t_c": inp.t_c})


def hinge_cost(s, values, pos, delta):
    s = np.atleast_1d(np.asarray(s, dtype=float))[:, None]
    z = values[~pos][None, :]
    p = values[pos][None, :]
    return (np.maximum(0.0, z - s + delta).sum(axis=1)
            + np.maximum(0.0, s - p + delta).sum(axis=1))


def separatrix_hinge(inp, delta=0.1, grid_size=10001):
    """Minimise the two-sided hinge cost over a grid plus every kink p_i +/- delta.

    The cost is convex and piecewise linear, so its minimisers form an
    interval whose ends are kinks or grid ends; the estimate is the middle
    of that interval.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    pos = inp.require_both()
    x = inp.values_at_tc
    lo, hi = x.min() - delta, x.max() + delta
    kinks = np.concatenate([x - delta, x + delta])
    cand = np.unique(np.concatenate([np.linspace(lo, hi, grid_size),
                                     kinks[(kinks >= lo) & (kinks <= hi)]]))
    cost = np.concatenate([hinge_cost(c, x, pos, delta) for c in np.array_split(cand, max(1, cand.size // 2048))])
    best = cost.min()
    tol = 1e-9 * max(1.0, abs(best))
    at_min = cand[cost <= best + tol]
    a, b = float(at_min.min()), float(at_min.max())
    value = (a + b) / 2.0
    # keep the documented range guarantee when the optimum sits in the delta margin
    value = min(max(value, float(x.min())), float(x.max()))
    return SeparatrixEstimate(value, Method.HINGE_MARGIN,
                              {"hinge_cost": float(best), "interval": [a, b],
                               "delta": float(delta), "t_c": inp.t_c})


def all_estimates(inp, num_bins=20, delta=0.1, grid_size=10001):
    return [separatrix_classification(inp), separatrix_entropy(inp, num_bins),
            separatrix_hinge(inp, delta, grid_size)]
