from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from selfreq.forest import (
    Dataset,
    ForestConfig,
    Stump,
    gini_gain,
    optimize_node,
    predict,
    train_forest,
    train_tree,
)
from selfreq.null_model import ParameterError, Strategy


def exact_gini(labels) -> Fraction:
    n = len(labels)
    ones = sum(labels)
    return 1 - Fraction(ones, n) ** 2 - Fraction(n - ones, n) ** 2


def exact_gain(parent, left, right) -> Fraction:
    n = len(parent)
    return exact_gini(parent) - Fraction(len(left), n) * exact_gini(left) - Fraction(len(right), n) * exact_gini(right)


def brute_best_stump(X, y, samples, cands):
    """Enumerate every feature and midpoint threshold with exact arithmetic."""
    best = None
    for f in sorted(cands):
        vals = sorted({X[i, f] for i in samples})
        for a, b in zip(vals, vals[1:]):
            tau = (a + b) / 2
            left = [y[i] for i in samples if X[i, f] >= tau]
            right = [y[i] for i in samples if X[i, f] < tau]
            g = exact_gain([y[i] for i in samples], left, right)
            if best is None or g > best[0]:
                best = (g, f, tau)
    return best


def null_dataset(S, F, seed):
    rng = np.random.default_rng(seed)
    y = np.zeros(S, dtype=int)
    y[: S // 2] = 1
    rng.shuffle(y)
    return Dataset(rng.normal(0, 5, size=(S, F)), y)


# ---- gini ----

def test_gini_perfect_split():
    assert gini_gain([0, 0, 1, 1], [0, 0], [1, 1]) == pytest.approx(0.5)


def test_gini_uninformative_split():
    assert gini_gain([0, 0, 1, 1], [0, 1], [0, 1]) == pytest.approx(0.0, abs=1e-15)


def test_gini_unbalanced_split():
    expected = exact_gain([0, 0, 0, 1], [0], [0, 0, 1])
    assert expected == Fraction(1, 24)
    assert gini_gain([0, 0, 0, 1], [0], [0, 0, 1]) == pytest.approx(float(expected), rel=1e-14)


def test_gini_rejects_empty_side():
    with pytest.raises(ValueError):
        gini_gain([0, 1], [], [0, 1])


@settings(max_examples=80)
@given(st.lists(st.integers(0, 1), min_size=2, max_size=30), st.data())
def test_gini_gain_nonnegative(labels, data):
    cut = data.draw(st.integers(1, len(labels) - 1))
    g = gini_gain(labels, labels[:cut], labels[cut:])
    assert g >= 0
    assert g == pytest.approx(float(exact_gain(labels, labels[:cut], labels[cut:])), abs=1e-12)


# ---- dataset ----

def test_dataset_validation():
    with pytest.raises(ParameterError):
        Dataset(np.zeros((3, 2)), [0, 1])
    with pytest.raises(ParameterError):
        Dataset(np.zeros((2, 2)), [0, 2])
    with pytest.raises(ParameterError):
        Dataset(np.array([[0.0, np.nan], [1, 1]]), [0, 1])


# ---- node optimization ----

def test_optimize_separable_feature():
    X = np.array([[0.3, 1.0], [0.1, 2.0], [0.4, 3.0], [0.2, 4.0]])
    y = np.array([0, 0, 1, 1])
    d = Dataset(X, y)
    stump, gain = optimize_node(range(4), [0, 1], d)
    g, f, tau = brute_best_stump(X, y, range(4), [0, 1])
    assert (stump.feature_index, stump.threshold) == (f, tau) == (1, 2.5)
    assert gain == pytest.approx(float(g)) == pytest.approx(0.5)


def test_optimize_pure_labels():
    d = Dataset(np.arange(8.0).reshape(4, 2), [1, 1, 1, 1])
    assert optimize_node(range(4), [0, 1], d) is None


def test_optimize_constant_features():
    d = Dataset(np.ones((4, 3)), [0, 1, 0, 1])
    assert optimize_node(range(4), [0, 1, 2], d) is None


def test_optimize_tie_goes_to_lower_index():
    X = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]])
    d = Dataset(X, [0, 0, 1, 1])
    stump, _ = optimize_node(range(4), [0, 1], d)
    assert stump.feature_index == 0
    # candidate order is the tie-break order
    stump, _ = optimize_node(range(4), [1, 0], d)
    assert stump.feature_index == 1


def test_optimize_tie_goes_to_smallest_threshold():
    # thresholds 1.5 and 3.5 both isolate one class-1 sample
    d = Dataset(np.array([[1.0], [2.0], [3.0], [4.0]]), [1, 0, 0, 1])
    stump, gain = optimize_node(range(4), [0], d)
    assert stump.threshold == 1.5
    assert gain == pytest.approx(float(exact_gain([1, 0, 0, 1], [0, 0, 1], [1])))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(4, 12), st.integers(1, 4))
def test_optimize_matches_brute_force(seed, n, F):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 5, size=(n, F)).astype(float)
    y = rng.integers(0, 2, size=n)
    d = Dataset(X, y)
    got = optimize_node(range(n), range(F), d)
    best = brute_best_stump(X, y, range(n), range(F))
    if best is None or best[0] <= 0:
        assert got is None
        return
    stump, gain = got
    assert gain == pytest.approx(float(best[0]), abs=1e-12)
    assert (stump.feature_index, stump.threshold) == (best[1], best[2])


def test_optimize_adjacent_floats():
    a = 1.0
    b = np.nextafter(a, 2.0)
    d = Dataset(np.array([[a], [a], [b], [b]]), [0, 0, 1, 1])
    stump, _ = optimize_node(range(4), [0], d)
    assert (d.features[:, 0] >= stump.threshold).tolist() == [False, False, True, True]


# ---- training ----

def test_empty_forest():
    f = train_forest(ForestConfig(0, 2), null_dataset(20, 4, 0))
    assert f.selection_counts.tolist() == [0] * 4
    assert f.avg_internal_nodes == 0.0
    with pytest.raises(ValueError):
        predict(f, np.zeros(4))


def test_single_feature_forest():
    f = train_forest(ForestConfig(5, 1, rng_seed=3), null_dataset(40, 1, 1))
    assert f.selection_counts[0] == f.internal_node_counts.sum() > 0


def test_config_mismatch():
    with pytest.raises(ParameterError):
        train_forest(ForestConfig(2, 5), null_dataset(20, 4, 0))
    with pytest.raises(ParameterError):
        train_forest(ForestConfig(2, 2, bagging_ratio=0.05), null_dataset(20, 4, 0))


@pytest.mark.parametrize("strategy", list(Strategy))
def test_conservation_and_K(strategy):
    d = null_dataset(120, 15, 2)
    f = train_forest(ForestConfig(12, 4, strategy, rng_seed=7), d)
    assert f.selection_counts.sum() == f.internal_node_counts.sum()
    assert f.avg_internal_nodes == pytest.approx(f.internal_node_counts.mean())
    assert [t.internal_node_count for t in f.trees] == f.internal_node_counts.tolist()


@pytest.mark.parametrize("strategy", list(Strategy))
def test_deterministic_serial_vs_parallel(strategy):
    d = null_dataset(100, 12, 4)
    a = train_forest(ForestConfig(16, 4, strategy, rng_seed=11), d)
    b = train_forest(ForestConfig(16, 4, strategy, rng_seed=11, n_jobs=4), d)
    c = train_forest(ForestConfig(16, 4, strategy, rng_seed=12), d)
    np.testing.assert_array_equal(a.selection_counts, b.selection_counts)
    assert [t.threshold for t in a.trees] == [t.threshold for t in b.trees]
    assert not np.array_equal(a.selection_counts, c.selection_counts)


def test_per_tree_uses_single_subset():
    d = null_dataset(150, 20, 5)
    f = train_forest(ForestConfig(10, 5, Strategy.PER_TREE, rng_seed=1), d)
    for tree in f.trees:
        assert tree.feature_subset is not None and len(set(tree.feature_subset)) == 5
        assert all(s.feature_index in tree.feature_subset for s in tree.stumps())


def test_per_node_uses_many_features_per_tree():
    d = null_dataset(200, 20, 5)
    f = train_forest(ForestConfig(5, 2, Strategy.PER_NODE, rng_seed=1), d)
    assert all(t.feature_subset is None for t in f.trees)
    assert max(len({s.feature_index for s in t.stumps()}) for t in f.trees) > 2


def test_internal_nodes_have_positive_gain():
    d = null_dataset(80, 6, 8)
    cfg = ForestConfig(6, 3, rng_seed=2)
    f = train_forest(cfg, d)
    for tree in f.trees:
        # replay the tree: every internal node must separate its samples with positive gain
        rng_idx = None
        stack = [(0, None)]
        for node, (fi, tau) in enumerate(zip(tree.feature, tree.threshold)):
            if fi < 0:
                continue
            n0, n1 = tree.class_counts[node]
            l0, l1 = tree.class_counts[tree.left[node]]
            r0, r1 = tree.class_counts[tree.right[node]]
            assert (l0 + r0, l1 + r1) == (n0, n1)
            g = gini_gain([0] * n0 + [1] * n1, [0] * l0 + [1] * l1, [0] * r0 + [1] * r1)
            assert g > 0


def test_bag_size_and_min_split():
    d = null_dataset(50, 4, 9)
    cfg = ForestConfig(1, 2, bagging_ratio=0.3, min_samples_to_split=50, rng_seed=0)
    f = train_forest(cfg, d)
    assert sum(f.trees[0].class_counts[0]) == 15
    assert f.internal_node_counts.tolist() == [0]


def test_max_depth_caps_nodes():
    d = null_dataset(200, 10, 1)
    f = train_forest(ForestConfig(8, 3, max_depth=2, rng_seed=0), d)
    assert f.internal_node_counts.max() <= 3
    f0 = train_forest(ForestConfig(8, 3, max_depth=0, rng_seed=0), d)
    assert f0.internal_node_counts.sum() == 0


# ---- prediction ----

def test_predict_single_leaf():
    d = Dataset(np.arange(10.0).reshape(5, 2), [1, 1, 1, 1, 1])
    f = train_forest(ForestConfig(1, 1, bagging_ratio=1.0), d)
    assert predict(f, [0.0, 0.0]) == 1


def test_predict_tie_goes_to_zero():
    d = Dataset(np.arange(8.0).reshape(4, 2), [1, 1, 1, 1])
    f = train_forest(ForestConfig(2, 1, bagging_ratio=1.0), d)
    f.trees[1].class_counts[0] = (3, 0)  # tree 2 now votes 0
    assert predict(f, [0.0, 0.0]) == 0


def test_predict_separable_training_samples():
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        y = np.repeat([0, 1], 30)
        X = rng.normal(size=(60, 5))
        X[:, 2] += 6 * y
        f = train_forest(ForestConfig(15, 2, rng_seed=seed), Dataset(X, y))
        hits += predict(f, X[7]) == y[7]
    assert hits >= 18


# ---- null uniformity ----

def _null_count_matrix(strategy, runs=100):
    rows = []
    for r in range(runs):
        d = null_dataset(200, 20, 1000 + r)
        rows.append(train_forest(ForestConfig(20, 5, strategy, rng_seed=r), d).selection_counts)
    return np.array(rows)


def test_null_selection_uniform_pooled_per_node():
    counts = _null_count_matrix(Strategy.PER_NODE)
    _, p = stats.chisquare(counts.sum(axis=0))
    assert p > 0.001


@pytest.mark.parametrize("strategy", list(Strategy))
def test_null_selection_exchangeable(strategy):
    # per-tree counts are clustered within trees, so pooled multinomial
    # chi-square is invalid there; Friedman only needs within-run exchangeability
    counts = _null_count_matrix(strategy)
    _, p = stats.friedmanchisquare(*counts.T)
    assert p > 0.001
