"""Gaussian hidden Markov model with diagonal covariances.

Used with two states over observations (price change, bid-ask imbalance).
Forward-backward runs with per-step normalisation; emission densities are
shifted by their per-step maximum before exponentiation so that near
degenerate states (variance at the floor) stay finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List

import numba
import numpy as np

from .errors import DegenerateInput, EmptyInput

VAR_FLOOR = 1e-10
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class HmmParams:
    transition: np.ndarray   # (K, K) row-stochastic
    means: np.ndarray        # (K, D)
    variances: np.ndarray    # (K, D)
    initial: np.ndarray      # (K,)

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=float)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.variances = np.maximum(np.atleast_2d(np.asarray(self.variances, dtype=float)), VAR_FLOOR)
        self.initial = np.asarray(self.initial, dtype=float)

    @property
    def n_states(self):
        return len(self.initial)

    def permuted(self, perm):
        perm = list(perm)
        return HmmParams(self.transition[np.ix_(perm, perm)], self.means[perm],
                         self.variances[perm], self.initial[perm])

    def to_dict(self):
        return {"transition": self.transition.tolist(), "means": self.means.tolist(),
                "variances": self.variances.tolist(), "initial": self.initial.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["transition"], d["means"], d["variances"], d["initial"])


def emission_logpdf(params, state, obs):
    mu = params.means[state]
    var = params.variances[state]
    o = np.asarray(obs, dtype=float)
    return float(-0.5 * np.sum(LOG_2PI + np.log(var) + (o - mu) ** 2 / var))


def emission_matrix(params, obs):
    """(T, K) log-densities of every observation under every state."""
    o = np.asarray(obs, dtype=float)[:, None, :]
    var = params.variances[None, :, :]
    return -0.5 * np.sum(LOG_2PI + np.log(var) + (o - params.means[None]) ** 2 / var, axis=2)


@numba.njit(cache=True)
def _forward_backward(logb, A, pi):
    T, K = logb.shape
    B = np.empty((T, K))
    shift = np.empty(T)
    for t in range(T):
        m = logb[t, 0]
        for j in range(1, K):
            if logb[t, j] > m:
                m = logb[t, j]
        shift[t] = m
        for j in range(K):
            B[t, j] = math.exp(logb[t, j] - m)
    alpha = np.empty((T, K))
    c = np.empty(T)
    s = 0.0
    for j in range(K):
        alpha[0, j] = pi[j] * B[0, j]
        s += alpha[0, j]
    c[0] = s
    for j in range(K):
        alpha[0, j] /= s
    for t in range(1, T):
        s = 0.0
        for j in range(K):
            acc = 0.0
            for i in range(K):
                acc += alpha[t - 1, i] * A[i, j]
            alpha[t, j] = acc * B[t, j]
            s += alpha[t, j]
        c[t] = s
        for j in range(K):
            alpha[t, j] /= s
    beta = np.empty((T, K))
    for j in range(K):
        beta[T - 1, j] = 1.0
    xi = np.zeros((K, K))
    for t in range(T - 2, -1, -1):
        for i in range(K):
            acc = 0.0
            for j in range(K):
                acc += A[i, j] * B[t + 1, j] * beta[t + 1, j]
            beta[t, i] = acc / c[t + 1]
        for i in range(K):
            for j in range(K):
                xi[i, j] += alpha[t, i] * A[i, j] * B[t + 1, j] * beta[t + 1, j] / c[t + 1]
    gamma = alpha * beta
    for t in range(T):
        s = 0.0
        for j in range(K):
            s += gamma[t, j]
        for j in range(K):
            gamma[t, j] /= s
    loglik = 0.0
    for t in range(T):
        loglik += math.log(c[t]) + shift[t]
    return gamma, xi, loglik


def forward_backward(params, obs):
    """Posterior state probabilities, expected transition counts and log-likelihood."""
    logb = emission_matrix(params, obs)
    return _forward_backward(logb, params.transition, params.initial)


def log_likelihood(params, sequences):
    return float(sum(forward_backward(params, o)[2] for o in _as_sequences(sequences)))


def _as_sequences(observations):
    if isinstance(observations, np.ndarray) and observations.ndim == 2:
        return [observations.astype(float)]
    seqs = [np.atleast_2d(np.asarray(o, dtype=float)) for o in observations]
    if not seqs or any(len(s) == 0 for s in seqs):
        raise EmptyInput("empty observation sequence")
    return seqs


def _kmeans_init(pooled, k, rng, iters=25):
    """Seeded k-means on standardised observations; returns HmmParams."""
    sd = pooled.std(axis=0)
    sd[sd == 0] = 1.0
    z = (pooled - pooled.mean(axis=0)) / sd
    uniq = np.unique(z, axis=0)
    centres = uniq[rng.choice(len(uniq), size=k, replace=False)]
    assign = np.zeros(len(z), dtype=np.int64)
    for _ in range(iters):
        d = ((z[:, None, :] - centres[None]) ** 2).sum(axis=2)
        new = d.argmin(axis=1)
        for j in range(k):
            if np.any(new == j):
                centres[j] = z[new == j].mean(axis=0)
        if np.array_equal(new, assign):
            break
        assign = new
    means = np.empty((k, pooled.shape[1]))
    variances = np.empty_like(means)
    for j in range(k):
        pts = pooled[assign == j] if np.any(assign == j) else pooled
        means[j] = pts.mean(axis=0)
        variances[j] = pts.var(axis=0)
    trans = np.full((k, k), 0.1 / max(k - 1, 1))
    np.fill_diagonal(trans, 0.9 if k > 1 else 1.0)
    return HmmParams(trans, means, variances, np.full(k, 1.0 / k))


def _m_step(seqs, posts, k):
    d = seqs[0].shape[1]
    g_sum = np.zeros(k)
    x_sum = np.zeros((k, d))
    xi_sum = np.zeros((k, k))
    pi = np.zeros(k)
    for o, (gamma, xi, _) in zip(seqs, posts):
        g_sum += gamma.sum(axis=0)
        x_sum += gamma.T @ o
        xi_sum += xi
        pi += gamma[0]
    means = x_sum / np.maximum(g_sum[:, None], 1e-300)
    sq = np.zeros((k, d))
    for o, (gamma, _, _) in zip(seqs, posts):
        for j in range(k):
            sq[j] += gamma[:, j] @ (o - means[j]) ** 2
    variances = np.maximum(sq / np.maximum(g_sum[:, None], 1e-300), VAR_FLOOR)
    rows = xi_sum.sum(axis=1, keepdims=True)
    trans = np.where(rows > 0, xi_sum / np.where(rows > 0, rows, 1.0), np.eye(k))
    trans /= trans.sum(axis=1, keepdims=True)
    pi /= pi.sum()
    return HmmParams(trans, means, variances, pi)


@dataclass
class FitResult:
    params: HmmParams
    log_likelihood_trace: List[float] = field(default_factory=list)
    converged: bool = False
    restart: int = 0

    @property
    def log_likelihood(self):
        return self.log_likelihood_trace[-1]


def _em(seqs, params, max_iters, tol):
    trace = []
    converged = False
    for _ in range(max_iters):
        posts = [forward_backward(params, o) for o in seqs]
        ll = float(sum(p[2] for p in posts))
        if trace and abs(ll - trace[-1]) < tol:
            trace.append(ll)
            converged = True
            break
        trace.append(ll)
        params = _m_step(seqs, posts, params.n_states)
    return params, trace, converged


def fit_baum_welch(observations, n_states=2, seed=0, n_restarts=5, max_iters=500, tol=1e-6):
    """Baum-Welch over one or several sequences with a pooled M-step.

    Each restart starts from a k-means split drawn from one seeded stream;
    the restart with the highest final log-likelihood is returned. The
    trace holds the log-likelihood of the parameters before every update,
    so the returned params belong to the second-to-last entry when the run
    converged and to the last update otherwise.
    """
    seqs = _as_sequences(observations)
    pooled = np.vstack(seqs)
    if len(np.unique(pooled, axis=0)) < max(2, n_states):
        raise DegenerateInput("need at least as many distinct observations as states")
    rng = np.random.default_rng(seed)
    best = None
    for r in range(n_restarts):
        start = _kmeans_init(pooled, n_states, rng)
        params, trace, conv = _em(seqs, start, max_iters, tol)
        if best is None or trace[-1] > best.log_likelihood_trace[-1]:
            best = FitResult(params, trace, conv, r)
    return best


def viterbi(params, obs):
    """Most probable state path and its log-probability; ties go to the lower state."""
    logb = emission_matrix(params, obs)
    T, K = logb.shape
    with np.errstate(divide="ignore"):
        logA = np.log(params.transition)
        delta = np.log(params.initial) + logb[0]
    back = np.zeros((T, K), dtype=np.int64)
    for t in range(1, T):
        cand = delta[:, None] + logA
        back[t] = cand.argmax(axis=0)
        delta = cand[back[t], np.arange(K)] + logb[t]
    path = np.empty(T, dtype=np.int64)
    path[-1] = int(delta.argmax())
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, float(delta.max())


def sample(params, length, rng):
    """Draw (states, observations) of the given length from the model."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    K = params.n_states
    states = np.empty(length, dtype=np.int64)
    states[0] = rng.choice(K, p=params.initial)
    u = rng.random(length)
    cum = np.cumsum(params.transition, axis=1)
    for t in range(1, length):
        states[t] = min(int(np.searchsorted(cum[states[t - 1]], u[t], side="right")), K - 1)
    noise = rng.standard_normal((length, params.means.shape[1]))
    obs = params.means[states] + noise * np.sqrt(params.variances[states])
    return states, obs


def best_permutation(estimated, reference):
    """State order of ``estimated`` that best matches ``reference`` means."""
    from itertools import permutations
    K = reference.n_states
    best = min(permutations(range(K)),
               key=lambda p: float(np.sum((estimated.means[list(p)] - reference.means) ** 2)))
    return list(best)


def trajectory_observations(traj, initial_price=None):
    """(price change, imbalance) rows; the first change is taken from the opening price."""
    close = np.asarray(traj.close, dtype=float)
    p0 = initial_price
    if p0 is None:
        p0 = traj.config.initial_price if traj.config is not None else close[0]
    dp = np.diff(np.concatenate([[p0], close]))
    return np.column_stack([dp, np.asarray(traj.imbalance, dtype=float)])
