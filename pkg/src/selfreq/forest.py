"""Random forests of binary stumps with per-node or per-tree feature subsampling.

Trees are grown greedily with the Gini impurity decrease and bagging without
replacement.  Each trained forest records how often every feature won a node
(the selection frequency) and the mean number of split nodes per tree.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .null_model import ParameterError, Strategy

GAIN_DECIMALS = 12


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=float)
        y = np.asarray(self.labels)
        if X.ndim != 2:
            raise ParameterError(f"features must be a 2-d matrix, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise ParameterError(f"labels length {y.shape} does not match {X.shape[0]} samples")
        if not np.all(np.isfinite(X)):
            raise ParameterError("features contain non-finite values")
        if y.size and not np.all((y == 0) | (y == 1)):
            raise ParameterError("labels must be 0 or 1")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y.astype(np.int8))

    @property
    def sample_count(self) -> int:
        return self.features.shape[0]

    @property
    def feature_count(self) -> int:
        return self.features.shape[1]

    def with_labels(self, labels) -> "Dataset":
        return Dataset(self.features, labels)


@dataclass(frozen=True)
class Stump:
    feature_index: int
    threshold: float

    def goes_left(self, x) -> bool:
        return x[self.feature_index] >= self.threshold


@dataclass(frozen=True)
class ForestConfig:
    num_trees: int
    subset_size: int
    strategy: Strategy = Strategy.PER_NODE
    bagging_ratio: float = 0.5
    min_samples_to_split: int = 5
    max_depth: int | None = None
    rng_seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy))
        if self.num_trees < 0:
            raise ParameterError("num_trees must be nonnegative")
        if self.subset_size < 1:
            raise ParameterError("subset_size must be positive")
        if not 0 < self.bagging_ratio <= 1:
            raise ParameterError("bagging_ratio must lie in (0, 1]")
        if self.min_samples_to_split < 2:
            raise ParameterError("min_samples_to_split must be >= 2")
        if self.max_depth is not None and self.max_depth < 0:
            raise ParameterError("max_depth must be nonnegative")

    def bag_size(self, sample_count: int) -> int:
        return math.ceil(self.bagging_ratio * sample_count)

    def check(self, data: Dataset) -> None:
        if self.subset_size > data.feature_count:
            raise ParameterError(
                f"subset_size {self.subset_size} exceeds feature count {data.feature_count}"
            )
        if self.bag_size(data.sample_count) < 2:
            raise ParameterError("bagging leaves fewer than 2 samples per tree")


@dataclass
class Tree:
    """Flat array tree. Internal nodes have left/right >= 0; leaves have -1."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    class_counts: list[tuple[int, int]] = field(default_factory=list)
    feature_subset: tuple[int, ...] | None = None

    def _add(self, counts: tuple[int, int]) -> int:
        self.feature.append(-1)
        self.threshold.append(math.nan)
        self.left.append(-1)
        self.right.append(-1)
        self.class_counts.append(counts)
        return len(self.feature) - 1

    @property
    def internal_node_count(self) -> int:
        return sum(1 for f in self.feature if f >= 0)

    def stumps(self) -> list[Stump]:
        return [Stump(f, t) for f, t in zip(self.feature, self.threshold) if f >= 0]

    def predict_one(self, x) -> int:
        node = 0
        while self.left[node] >= 0:
            node = self.left[node] if x[self.feature[node]] >= self.threshold[node] else self.right[node]
        n0, n1 = self.class_counts[node]
        return int(n1 > n0)


@dataclass(frozen=True)
class TrainedForest:
    trees: tuple[Tree, ...]
    selection_counts: np.ndarray
    internal_node_counts: np.ndarray
    config: ForestConfig

    @property
    def num_trees(self) -> int:
        return len(self.trees)

    @property
    def feature_count(self) -> int:
        return self.selection_counts.size

    @property
    def avg_internal_nodes(self) -> float:
        if not self.trees:
            return 0.0
        return float(self.internal_node_counts.mean())

    def null_params(self):
        from .null_model import NullModelParams

        return NullModelParams(
            self.feature_count,
            self.config.subset_size,
            self.num_trees,
            self.avg_internal_nodes,
            self.config.strategy,
        )


def gini(n0: int, n1: int) -> float:
    n = n0 + n1
    if n == 0:
        return 0.0
    p0, p1 = n0 / n, n1 / n
    return 1.0 - p0 * p0 - p1 * p1


def gini_gain(parent_labels, left_labels, right_labels) -> float:
    """Impurity decrease of splitting parent into left and right.

    Raises ValueError if either side is empty.
    """
    parent = np.asarray(parent_labels)
    left = np.asarray(left_labels)
    right = np.asarray(right_labels)
    if left.size == 0 or right.size == 0:
        raise ValueError("both sides of a split must be nonempty")
    if left.size + right.size != parent.size:
        raise ValueError("left and right must partition the parent")
    n = parent.size

    def imp(a):
        ones = int(np.count_nonzero(a))
        return gini(a.size - ones, ones)

    gain = imp(parent) - left.size / n * imp(left) - right.size / n * imp(right)
    return max(gain, 0.0)


def optimize_node(samples, candidate_features, data: Dataset):
    """Best Gini stump over the candidate features on the given samples.

    Thresholds are midpoints between consecutive distinct sorted values.
    Ties go to the candidate listed first, then to the smallest threshold;
    pass sorted candidates to break ties by lowest feature index.
    Returns ``(Stump, gain)`` or None when no split has positive gain.
    """
    samples = np.asarray(samples, dtype=np.intp)
    cands = np.asarray(candidate_features, dtype=np.intp)
    n = samples.size
    if n < 2 or cands.size == 0:
        return None
    y = data.labels[samples].astype(float)
    n1 = y.sum()
    if n1 == 0 or n1 == n:
        return None

    Xs = data.features[np.ix_(samples, cands)]  # n x m
    order = np.argsort(Xs, axis=0, kind="stable")
    xs = np.take_along_axis(Xs, order, axis=0)
    ys = y[order]
    # split after position i (i = 0..n-2): left holds sorted rows 0..i
    left_ones = np.cumsum(ys, axis=0)[:-1]
    left_n = np.arange(1, n, dtype=float)[:, None]
    right_n = n - left_n
    right_ones = n1 - left_ones
    parent = 1.0 - (n1 / n) ** 2 - ((n - n1) / n) ** 2
    gl = 1.0 - (left_ones / left_n) ** 2 - ((left_n - left_ones) / left_n) ** 2
    gr = 1.0 - (right_ones / right_n) ** 2 - ((right_n - right_ones) / right_n) ** 2
    gain = parent - left_n / n * gl - right_n / n * gr
    gain = np.round(gain, GAIN_DECIMALS)
    gain[xs[1:] == xs[:-1]] = -np.inf

    # candidate-major flattening so argmax picks first candidate, then smallest threshold
    flat = gain.T.ravel()
    best = int(np.argmax(flat))
    best_gain = float(flat[best])
    if not best_gain > 0:
        return None
    j, i = divmod(best, n - 1)
    tau = 0.5 * (xs[i, j] + xs[i + 1, j])
    if not tau > xs[i, j]:
        # adjacent floats: the midpoint rounds down onto the lower value
        tau = xs[i + 1, j]
    return Stump(int(cands[j]), float(tau)), best_gain


def _tree_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed % 2**64, index]))


def train_tree(config: ForestConfig, data: Dataset, rng: np.random.Generator) -> Tree:
    S, F = data.sample_count, data.feature_count
    Fn = config.subset_size
    bag = np.sort(rng.choice(S, size=config.bag_size(S), replace=False))
    tree = Tree()
    if config.strategy is Strategy.PER_TREE:
        tree.feature_subset = tuple(int(f) for f in rng.choice(F, size=Fn, replace=False))

    labels = data.labels
    root_ones = int(labels[bag].sum())
    stack = [(tree._add((bag.size - root_ones, root_ones)), bag, 0)]
    while stack:
        node, idx, depth = stack.pop()
        n0, n1 = tree.class_counts[node]
        if idx.size < config.min_samples_to_split or n0 == 0 or n1 == 0:
            continue
        if config.max_depth is not None and depth >= config.max_depth:
            continue
        if tree.feature_subset is not None:
            cands = tree.feature_subset
        else:
            cands = rng.choice(F, size=Fn, replace=False)
        found = optimize_node(idx, cands, data)
        if found is None:
            continue
        stump, _ = found
        go_left = data.features[idx, stump.feature_index] >= stump.threshold
        li, ri = idx[go_left], idx[~go_left]
        l1, r1 = int(labels[li].sum()), int(labels[ri].sum())
        tree.feature[node] = stump.feature_index
        tree.threshold[node] = stump.threshold
        tree.left[node] = tree._add((li.size - l1, l1))
        tree.right[node] = tree._add((ri.size - r1, r1))
        # right pushed first so the left subtree is expanded first
        stack.append((tree.right[node], ri, depth + 1))
        stack.append((tree.left[node], li, depth + 1))
    return tree


def train_forest(config: ForestConfig, data: Dataset) -> TrainedForest:
    """Train ``config.num_trees`` trees; every tree owns an RNG derived from (seed, index)."""
    config.check(data)

    def build(t: int) -> Tree:
        return train_tree(config, data, _tree_rng(config.rng_seed, t))

    if config.n_jobs > 1 and config.num_trees > 1:
        with ThreadPoolExecutor(max_workers=config.n_jobs) as pool:
            trees = tuple(pool.map(build, range(config.num_trees)))
    else:
        trees = tuple(build(t) for t in range(config.num_trees))

    counts = np.zeros(data.feature_count, dtype=np.int64)
    nodes = np.zeros(len(trees), dtype=np.int64)
    for t, tree in enumerate(trees):
        feats = np.asarray([f for f in tree.feature if f >= 0], dtype=np.intp)
        np.add.at(counts, feats, 1)
        nodes[t] = feats.size
    return TrainedForest(trees, counts, nodes, config)


def predict(forest: TrainedForest, sample) -> int:
    """Majority vote over trees; a tied vote goes to class 0."""
    if not forest.trees:
        raise ValueError("cannot predict with an empty forest")
    x = np.asarray(sample, dtype=float)
    if x.shape != (forest.feature_count,):
        raise ParameterError(f"sample must have {forest.feature_count} entries")
    votes = sum(tree.predict_one(x) for tree in forest.trees)
    return int(votes * 2 > len(forest.trees))
