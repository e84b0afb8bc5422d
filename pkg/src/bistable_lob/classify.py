"""Absorption-probability classifiers over (price, normalised time).

Label convention: y = 1 when the run did not reach zero (positive branch),
y = 0 when it did. Both models output p_positive = sigmoid(score).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import expit

from .ensemble import Label
from .errors import EmptyInput, NonFinite, OneClassOnly

PROB_CLIP = 1e-12


@dataclass(frozen=True)
class LabeledPoint:
    price: float
    time_norm: float
    label: int


@dataclass
class Dataset:
    """Feature matrix (price, t/T), labels and the run index of every row."""

    X: np.ndarray
    y: np.ndarray
    run: np.ndarray

    def __len__(self):
        return len(self.y)

    def points(self):
        return [LabeledPoint(float(p), float(t), int(lab)) for (p, t), lab in zip(self.X, self.y)]

    def subset(self, runs):
        mask = np.isin(self.run, np.asarray(list(runs)))
        return Dataset(self.X[mask], self.y[mask], self.run[mask])


def build_dataset(ens, subsample_stride=1):
    """Every stride-th step of every determinate run; close index i is step i + 1."""
    if subsample_stride < 1:
        raise ValueError("stride must be >= 1")
    rows, ys, runs = [], [], []
    for i, (traj, lab) in enumerate(zip(ens.trajectories, ens.labels)):
        if lab.value == Label.UNDETERMINED:
            continue
        T = len(traj)
        idx = np.arange(0, T, subsample_stride)
        rows.append(np.column_stack([traj.close[idx], (idx + 1) / T]))
        ys.append(np.full(idx.size, 1 if lab.value == Label.POSITIVE else 0, dtype=np.int64))
        runs.append(np.full(idx.size, i, dtype=np.int64))
    if not rows:
        raise EmptyInput("no determinate trajectories")
    return Dataset(np.vstack(rows), np.concatenate(ys), np.concatenate(runs))


def split_runs(run_ids, test_fraction=0.3, seed=0):
    """Shuffle distinct run ids and cut them into (train, test) lists."""
    ids = np.unique(np.asarray(run_ids))
    perm = np.random.default_rng(seed).permutation(ids)
    n_test = int(round(test_fraction * ids.size))
    if ids.size >= 2:
        n_test = min(max(n_test, 1), ids.size - 1)
    return sorted(perm[n_test:].tolist()), sorted(perm[:n_test].tolist())


def _check_two_classes(y):
    y = np.asarray(y)
    if y.size == 0:
        raise EmptyInput("no data")
    if np.all(y == y[0]):
        raise OneClassOnly("both classes are required")


def log_loss(y, p):
    p = np.clip(p, PROB_CLIP, 1 - PROB_CLIP)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


# ---------------------------------------------------------------- logistic

@dataclass
class LogisticModel:
    weights: np.ndarray      # raw-feature scale (w_price, w_time)
    bias: float
    feature_mean: Optional[np.ndarray] = None
    feature_std: Optional[np.ndarray] = None
    loss_trace: List[float] = field(default_factory=list)
    converged: bool = False

    def score(self, X):
        return np.atleast_2d(np.asarray(X, dtype=float)) @ self.weights + self.bias

    def predict_positive(self, X):
        return expit(self.score(X))

    def price_at_half(self, time_norm):
        """Price where p_positive = 0.5 at the given normalised time."""
        return -(self.bias + self.weights[1] * time_norm) / self.weights[0]

    def to_dict(self):
        return {"bias": float(self.bias), "w_price": float(self.weights[0]),
                "w_time": float(self.weights[1]), "iterations": len(self.loss_trace),
                "converged": self.converged}


def logistic_fit(X, y, learning_rate=0.5, max_iters=5000, tol=1e-8):
    """Full-batch gradient descent on mean cross-entropy over standardised features.

    Stops once the relative loss change drops below ``tol``. The returned
    weights are mapped back to the raw feature scale.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_two_classes(y)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    Z = (X - mu) / sd
    w = np.zeros(Z.shape[1])
    b = 0.0
    trace = []
    converged = False
    prev = None
    for _ in range(max_iters):
        p = expit(Z @ w + b)
        loss = log_loss(y, p)
        if not np.isfinite(loss) or (prev is not None and loss > 10 * prev + 1):
            raise NonFinite("loss diverged; lower the learning rate")
        trace.append(loss)
        if prev is not None and abs(prev - loss) <= tol * max(abs(prev), 1e-300):
            converged = True
            break
        prev = loss
        r = p - y
        w -= learning_rate * (Z.T @ r) / len(y)
        b -= learning_rate * r.mean()
    w_raw = w / sd
    b_raw = b - float(w_raw @ mu)
    return LogisticModel(w_raw, b_raw, mu, sd, trace, converged)


def logistic_predict(model, point):
    """(p_zero, p_positive) for one (price, time_norm) point."""
    p = float(model.predict_positive(np.asarray(point, dtype=float))[0])
    return 1.0 - p, p


# -------------------------------------------------------------------- trees

@dataclass
class TreeNode:
    value: float = 0.0
    feature: int = -1
    threshold: float = 0.0
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None

    @property
    def is_leaf(self):
        return self.left is None


def _best_split(Xn, g, min_leaf):
    """Exhaustive variance-reduction split; returns (feature, threshold) or None."""
    n = len(g)
    best_gain, best = 0.0, None
    total = g.sum()
    base = total * total / n
    for f in range(Xn.shape[1]):
        order = np.argsort(Xn[:, f], kind="mergesort")
        xs = Xn[order, f]
        cs = np.cumsum(g[order])
        # candidate cut after position k (left = first k+1 rows)
        k = np.arange(min_leaf - 1, n - min_leaf)
        if k.size == 0:
            continue
        k = k[xs[k] < xs[k + 1]]
        if k.size == 0:
            continue
        nl = k + 1.0
        sl = cs[k]
        gain = sl * sl / nl + (total - sl) ** 2 / (n - nl) - base
        j = int(np.argmax(gain))
        if gain[j] > best_gain + 1e-12 * max(1.0, abs(base)):
            best_gain = gain[j]
            best = (f, float((xs[k[j]] + xs[k[j] + 1]) / 2.0))
    return best


def _grow(X, g, hess, depth, max_depth, min_leaf):
    denom = hess.sum()
    value = float(g.sum() / denom) if denom > 1e-12 else 0.0
    node = TreeNode(value=value)
    if depth >= max_depth or len(g) < 2 * min_leaf:
        return node
    split = _best_split(X, g, min_leaf)
    if split is None:
        return node
    f, thr = split
    m = X[:, f] <= thr
    node.feature, node.threshold = f, thr
    node.left = _grow(X[m], g[m], hess[m], depth + 1, max_depth, min_leaf)
    node.right = _grow(X[~m], g[~m], hess[~m], depth + 1, max_depth, min_leaf)
    return node


def tree_predict(node, X):
    X = np.atleast_2d(X)
    out = np.empty(len(X))
    stack = [(node, np.arange(len(X)))]
    while stack:
        nd, idx = stack.pop()
        if nd.is_leaf:
            out[idx] = nd.value
            continue
        m = X[idx, nd.feature] <= nd.threshold
        stack.append((nd.left, idx[m]))
        stack.append((nd.right, idx[~m]))
    return out


def tree_leaves(node):
    if node.is_leaf:
        return [node]
    return tree_leaves(node.left) + tree_leaves(node.right)


@dataclass
class BoostedModel:
    initial_score: float
    trees: List[TreeNode]
    learning_rate: float
    loss_trace: List[float] = field(default_factory=list)

    def score(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        f = np.full(len(X), self.initial_score)
        for t in self.trees:
            f += self.learning_rate * tree_predict(t, X)
        return f

    def predict_positive(self, X):
        return expit(self.score(X))

    def to_dict(self):
        return {"initial_score": self.initial_score, "n_trees": len(self.trees),
                "learning_rate": self.learning_rate}


def clamped_log_odds(y):
    n = len(y)
    k = float(np.sum(y))
    rate = min(max(k / n, 0.5 / n), (n - 0.5) / n)
    return float(np.log(rate / (1 - rate)))


def gbm_fit(X, y, n_trees=100, learning_rate=0.1, max_depth=3, min_leaf=20,
            allow_single_class=False):
    """Gradient boosting for logistic loss with Newton leaf values.

    Each round fits a regression tree to g = y - p and sets each leaf to
    sum(g) / sum(p(1-p)). With ``allow_single_class`` a one-class sample
    yields a tree-free model at the clamped base rate instead of an error.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if not 0 < learning_rate <= 1:
        raise ValueError("learning_rate must lie in (0, 1]")
    if len(y) == 0:
        raise EmptyInput("no data")
    f0 = clamped_log_odds(y)
    if np.all(y == y[0]):
        if not allow_single_class:
            raise OneClassOnly("both classes are required")
        return BoostedModel(f0, [], learning_rate)
    model = BoostedModel(f0, [], learning_rate)
    F = np.full(len(y), f0)
    model.loss_trace.append(log_loss(y, expit(F)))
    for _ in range(n_trees):
        p = expit(F)
        g = y - p
        tree = _grow(X, g, p * (1 - p), 0, max_depth, min_leaf)
        model.trees.append(tree)
        F += learning_rate * tree_predict(tree, X)
        model.loss_trace.append(log_loss(y, expit(F)))
    return model


def gbm_predict(model, point):
    p = float(model.predict_positive(np.asarray(point, dtype=float))[0])
    return 1.0 - p, p


# --------------------------------------------------------------- evaluation

def _ratio(num, den):
    return float(num / den) if den else None


def metrics_from_confusion(cm):
    """Accuracy and per-class precision/recall; rows are truth, columns prediction."""
    cm = np.asarray(cm)
    total = cm.sum()
    out = {"accuracy": _ratio(np.trace(cm), total), "confusion": cm.tolist(),
           "precision": {}, "recall": {}}
    for c in (0, 1):
        out["precision"][str(c)] = _ratio(cm[c, c], cm[:, c].sum())
        out["recall"][str(c)] = _ratio(cm[c, c], cm[c, :].sum())
    return out


def evaluate(p_positive, truth, threshold=0.5):
    """Metrics for predictions ``p_positive >= threshold`` against 0/1 truth."""
    p = np.asarray(p_positive, dtype=float)
    t = np.asarray(truth).astype(int)
    if p.size == 0:
        raise EmptyInput("no predictions")
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    pred = (p >= threshold).astype(int)
    cm = np.zeros((2, 2), dtype=np.int64)
    np.add.at(cm, (t, pred), 1)
    return metrics_from_confusion(cm)


def compare_models(ens, stride=10, test_fraction=0.3, split_seed=0, n_trees=100,
                   learning_rate=0.1, max_depth=3, min_leaf=20, max_iters=5000):
    """Fit both classifiers on a run-level split and report test metrics."""
    data = build_dataset(ens, stride)
    train_runs, test_runs = split_runs(data.run, test_fraction, split_seed)
    train, test = data.subset(train_runs), data.subset(test_runs)
    logit = logistic_fit(train.X, train.y, max_iters=max_iters)
    gbm = gbm_fit(train.X, train.y, n_trees, learning_rate, max_depth, min_leaf)
    return {
        "split": {"train_runs": train_runs, "test_runs": test_runs, "seed": split_seed,
                  "n_train": len(train), "n_test": len(test)},
        "logistic": {"coefficients": logit.to_dict(),
                     "test": evaluate(logit.predict_positive(test.X), test.y)},
        "gbm": {"model": gbm.to_dict(),
                "test": evaluate(gbm.predict_positive(test.X), test.y)},
    }
