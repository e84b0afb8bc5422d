import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bistable_lob.classify import (BoostedModel, LogisticModel, TreeNode, build_dataset,
                                   clamped_log_odds, evaluate, gbm_fit, gbm_predict, log_loss,
                                   logistic_fit, logistic_predict, metrics_from_confusion,
                                   split_runs, tree_leaves)
from bistable_lob.ensemble import Ensemble, Label, TerminalLabel
from bistable_lob.errors import OneClassOnly
from bistable_lob.market import MarketConfig, Trajectory

PUBLISHED = LogisticModel(np.array([1.1029, 5.6285]), -7.2757)


def separable():
    X = np.array([[0.0, 0.0]] * 50 + [[10.0, 1.0]] * 50)
    y = np.r_[np.zeros(50), np.ones(50)]
    return X, y


def xor_data(rng, n=50):
    centres = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    labels = np.array([0, 1, 1, 0])
    X = np.vstack([c + 0.05 * rng.standard_normal((n, 2)) for c in centres])
    return X, np.repeat(labels, n)


def traj(values):
    v = np.asarray(values, dtype=float)
    z = np.zeros(len(v), dtype=np.int64)
    return Trajectory(v, z, z, z, z)


# ------------------------------------------------------------ dataset

def test_build_dataset_one_trajectory():
    ens = Ensemble(MarketConfig(), 0, [traj(np.arange(10.0))], [TerminalLabel(Label.POSITIVE, 9.0)])
    d = build_dataset(ens)
    assert len(d) == 10 and set(d.y) == {1}
    assert d.X[0, 1] == pytest.approx(0.1) and d.X[-1, 1] == 1.0


def test_build_dataset_stride_and_undetermined():
    trajs = [traj(np.full(5000, 3.0)), traj(np.zeros(5000)), traj(np.ones(5000))]
    labels = [TerminalLabel(Label.POSITIVE, 3.0), TerminalLabel(Label.REACHED_ZERO, 0.0),
              TerminalLabel(Label.UNDETERMINED, 1.0)]
    d = build_dataset(Ensemble(MarketConfig(), 0, trajs, labels), subsample_stride=10)
    assert len(d) == 1000 and np.bincount(d.run).tolist() == [500, 500]
    assert d.y[d.run == 1].sum() == 0


def test_split_runs_disjoint_and_deterministic():
    train, test = split_runs(range(10), 0.3, seed=4)
    assert len(test) == 3 and not set(train) & set(test) and sorted(train + test) == list(range(10))
    assert split_runs(range(10), 0.3, seed=4) == (train, test)


# ------------------------------------------------------------ logistic

def test_logistic_separable_accuracy_one():
    X, y = separable()
    m = logistic_fit(X, y)
    assert evaluate(m.predict_positive(X), y)["accuracy"] == 1.0


def test_logistic_one_class_rejected():
    with pytest.raises(OneClassOnly):
        logistic_fit(np.ones((5, 2)), np.ones(5))


def test_zero_model_predicts_half():
    m = LogisticModel(np.zeros(2), 0.0)
    assert logistic_predict(m, (123.0, 0.7)) == (0.5, 0.5)


def test_published_coefficients_half_price():
    p_zero, p_pos = logistic_predict(PUBLISHED, (5.88, 0.14))
    assert p_pos == pytest.approx(0.5, abs=0.005) and p_zero + p_pos == 1.0
    # the footnote's version folds the time term into the intercept
    assert PUBLISHED.price_at_half(0.14) == pytest.approx(5.88, abs=0.01)


def test_prediction_monotone_in_bias():
    ps = [logistic_predict(LogisticModel(np.array([1.0, 1.0]), b), (1.0, 0.5))[1]
          for b in np.linspace(-20, 20, 41)]
    assert np.all(np.diff(ps) >= 0) and ps[-1] > 0.999


def test_logistic_loss_decreases(rng):
    X = np.column_stack([rng.normal(5, 2, 400), rng.uniform(0, 1, 400)])
    y = (X[:, 0] + rng.normal(0, 1, 400) > 5).astype(float)
    m = logistic_fit(X, y)
    assert np.all(np.diff(m.loss_trace) <= 1e-12)
    assert m.weights[0] > 0


def test_logistic_invariant_to_feature_scaling(rng):
    X = np.column_stack([rng.normal(5, 2, 300), rng.uniform(0, 1, 300)])
    y = (X[:, 0] + 3 * X[:, 1] + rng.normal(0, 1, 300) > 6).astype(float)
    a = logistic_fit(X, y, max_iters=3000)
    b = logistic_fit(X * np.array([10.0, 0.1]), y, max_iters=3000)
    assert np.allclose(a.predict_positive(X), b.predict_positive(X * np.array([10.0, 0.1])),
                       atol=1e-9)


def test_logistic_cannot_fit_xor(rng):
    X, y = xor_data(rng)
    m = logistic_fit(X, y)
    assert evaluate(m.predict_positive(X), y)["accuracy"] <= 0.75


# ------------------------------------------------------------ boosting

def test_gbm_fits_xor(rng):
    X, y = xor_data(rng)
    m = gbm_fit(X, y, n_trees=50, max_depth=2, min_leaf=5)
    assert evaluate(m.predict_positive(X), y)["accuracy"] == 1.0
    assert np.all(np.diff(m.loss_trace) <= 1e-12)


def test_gbm_without_trees_is_base_rate():
    y = np.r_[np.zeros(30), np.ones(10)]
    m = gbm_fit(np.zeros((40, 2)), y, n_trees=0)
    assert m.predict_positive([[1.0, 2.0]])[0] == pytest.approx(0.25)
    assert gbm_predict(BoostedModel(0.0, [], 0.1), (3.0, 0.3)) == (0.5, 0.5)


def test_gbm_single_class():
    with pytest.raises(OneClassOnly):
        gbm_fit(np.zeros((10, 2)), np.ones(10))
    m = gbm_fit(np.zeros((10, 2)), np.ones(10), allow_single_class=True)
    assert m.trees == [] and m.initial_score == pytest.approx(np.log(9.5 / 0.5))
    assert m.predict_positive([[0.0, 0.0]])[0] > 0.9


def test_single_leaf_closed_form():
    m = BoostedModel(0.3, [TreeNode(value=0.8)], 1.0)
    p = 1 / (1 + np.exp(-(0.3 + 0.8)))
    assert gbm_predict(m, (1.0, 0.5))[1] == pytest.approx(p)


def test_tree_leaf_count_bounded(rng):
    X, y = xor_data(rng)
    m = gbm_fit(X, y, n_trees=5, max_depth=3, min_leaf=5)
    assert all(len(tree_leaves(t)) <= 8 for t in m.trees)


@settings(max_examples=50)
@given(st.floats(-100, 100), st.floats(0, 1), st.floats(-5, 5), st.floats(-5, 5))
def test_probabilities_sum_to_one(price, t, f0, leaf):
    m = BoostedModel(f0, [TreeNode(value=leaf)], 0.5)
    pz, pp = gbm_predict(m, (price, t))
    assert pz + pp == pytest.approx(1.0, abs=1e-15) and 0 <= pp <= 1


def test_clamped_log_odds():
    assert clamped_log_odds(np.ones(4)) == pytest.approx(np.log(3.5 / 0.5))
    assert clamped_log_odds(np.array([0, 1])) == 0.0


# ------------------------------------------------------------ evaluation

def test_published_confusion_matrix_metrics():
    cm = [[12502, 1697], [3579, 7222]]
    m = metrics_from_confusion(cm)
    assert m["accuracy"] == pytest.approx(0.789, abs=5e-4)
    assert m["precision"]["0"] == pytest.approx(12502 / 16081)
    assert m["recall"]["1"] == pytest.approx(7222 / 10801)


def test_evaluate_perfect_and_constant():
    truth = np.array([0, 0, 1, 1])
    perfect = evaluate(np.array([0.1, 0.2, 0.9, 0.8]), truth)
    assert perfect["accuracy"] == 1.0 and perfect["confusion"] == [[2, 0], [0, 2]]
    const = evaluate(np.full(4, 0.9), truth)
    assert const["accuracy"] == 0.5 and const["recall"]["0"] == 0.0
    assert const["precision"]["0"] is None


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=40))
def test_metrics_consistent_with_confusion(pairs):
    p = np.array([a for a, _ in pairs])
    t = np.array([b for _, b in pairs])
    m = evaluate(p, t)
    cm = np.array(m["confusion"])
    assert cm.sum() == len(pairs) and m["accuracy"] == pytest.approx(np.trace(cm) / cm.sum())


def test_log_loss_clip():
    assert log_loss(np.array([1.0]), np.array([0.0])) == pytest.approx(-np.log(1e-12))
