"""Null distribution of per-feature selection counts in a random forest.

Under the null hypothesis every feature is equally likely to win any node, so
the number of times a feature is chosen as the split variable follows a
binomial law (per-node feature subsampling) or a T-fold mixture of per-tree
binomials (per-tree feature subsampling).  Thresholds on the selection count
are then picked so that the tail probability stays below a target rate.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln, xlog1py, xlogy

PARTITION_CAP = 60


class Strategy(str, enum.Enum):
    PER_NODE = "per-node"
    PER_TREE = "per-tree"

    @classmethod
    def parse(cls, value: "Strategy | str") -> "Strategy":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower().replace("_", "-")
        aliases = {"pernode": "per-node", "pertree": "per-tree", "i": "per-node", "ii": "per-tree",
                   "1": "per-node", "2": "per-tree"}
        text = aliases.get(text.replace("-", ""), text)
        try:
            return cls(text)
        except ValueError:
            raise ValueError(f"unknown strategy {value!r}; expected 'per-node' or 'per-tree'") from None


class ParameterError(ValueError):
    """Raised for inconsistent (F, F_n, T, K) combinations."""


class CapacityError(ValueError):
    """Raised when partition enumeration is asked for k above the cap."""


class InfeasibleThresholdError(RuntimeError):
    """Raised when no threshold in the search range meets the target rate."""


@dataclass(frozen=True)
class NullModelParams:
    total_features: int
    subset_size: int
    num_trees: int
    avg_internal_nodes: float
    strategy: Strategy = Strategy.PER_NODE

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy))
        F, Fn, T, K = self.total_features, self.subset_size, self.num_trees, self.avg_internal_nodes
        if int(F) != F or F < 1:
            raise ParameterError(f"total_features must be a positive integer, got {F}")
        if int(Fn) != Fn or Fn < 1:
            raise ParameterError(f"subset_size must be a positive integer, got {Fn}")
        if Fn > F:
            raise ParameterError(f"subset_size {Fn} exceeds total_features {F}")
        if int(T) != T or T < 0:
            raise ParameterError(f"num_trees must be a nonnegative integer, got {T}")
        if not math.isfinite(K) or K < 0:
            raise ParameterError(f"avg_internal_nodes must be finite and >= 0, got {K}")

    @property
    def nodes_per_tree(self) -> int:
        """Integer node budget of one tree, round(K)."""
        return int(round(self.avg_internal_nodes))

    @property
    def node_budget(self) -> int:
        """Largest attainable selection count in the whole forest."""
        if self.strategy is Strategy.PER_NODE:
            return int(round(self.num_trees * self.avg_internal_nodes))
        return self.num_trees * self.nodes_per_tree


@dataclass(frozen=True)
class Partition:
    parts: tuple[int, ...]

    @property
    def total(self) -> int:
        return sum(self.parts)

    @property
    def multiplicities(self) -> dict[int, int]:
        """Number of parts equal to each distinct value."""
        out: dict[int, int] = {}
        for p in self.parts:
            out[p] = out.get(p, 0) + 1
        return out


@dataclass(frozen=True)
class ThresholdDecision:
    alpha: float
    kappa_star: int
    tail_prob: float
    expected_fp: float


def _require(params: NullModelParams, strategy: Strategy) -> None:
    if params.strategy is not strategy:
        raise ParameterError(f"expected {strategy.value} params, got {params.strategy.value}")


def binomial_log_pmf(k, n: int, p: float) -> np.ndarray:
    """log Binomial(n, p) pmf at k; -inf outside 0..n."""
    k = np.asarray(k, dtype=float)
    inside = (k >= 0) & (k <= n)
    kk = np.where(inside, k, 0.0)
    logc = gammaln(n + 1) - gammaln(kk + 1) - gammaln(n - kk + 1)
    out = logc + xlogy(kk, p) + xlog1py(n - kk, -p)
    return np.where(inside, out, -np.inf)


def binomial_pmf_vector(n: int, p: float) -> np.ndarray:
    return np.exp(binomial_log_pmf(np.arange(n + 1), n, p))


def strategy1_pmf(params: NullModelParams, k: int) -> float:
    """P(feature selected exactly k times) with a fresh subset at every node."""
    _require(params, Strategy.PER_NODE)
    if k < 0:
        raise ValueError("k must be nonnegative")
    n = params.node_budget
    return float(np.exp(binomial_log_pmf(k, n, 1.0 / params.total_features)))


def strategy1_pmf_vector(params: NullModelParams) -> np.ndarray:
    _require(params, Strategy.PER_NODE)
    return binomial_pmf_vector(params.node_budget, 1.0 / params.total_features)


def per_tree_inclusion_prob(F: int, F_n: int) -> float:
    """Probability a given feature lands in a uniform F_n-subset of F features.

    Equal to C(F-1, F_n-1) / C(F, F_n), which reduces to F_n / F.
    """
    if F < 1 or F_n < 1 or F_n > F:
        raise ParameterError(f"need 1 <= F_n <= F, got F={F}, F_n={F_n}")
    return F_n / F


def strategy2_per_tree_vector(params: NullModelParams) -> np.ndarray:
    """Per-tree selection-count pmf over 0..round(K) for per-tree subsampling."""
    _require(params, Strategy.PER_TREE)
    inc = per_tree_inclusion_prob(params.total_features, params.subset_size)
    within = binomial_pmf_vector(params.nodes_per_tree, 1.0 / params.subset_size)
    out = within * inc
    out[0] += 1.0 - inc
    return out


def strategy2_per_tree_pmf(params: NullModelParams, xi: int) -> float:
    if xi < 0:
        raise ValueError("xi must be nonnegative")
    vec = strategy2_per_tree_vector(params)
    return float(vec[xi]) if xi < vec.size else 0.0


def enumerate_partitions(k: int, cap: int = PARTITION_CAP) -> list[Partition]:
    """All partitions of k, parts in nonincreasing order, reverse-lex order."""
    if k < 1:
        raise ValueError("k must be a positive integer")
    if k > cap:
        raise CapacityError(
            f"k={k} exceeds the partition cap {cap}; use strategy2_pmf_convolution instead"
        )
    return [Partition(p) for p in _partitions(k, k)]


@lru_cache(maxsize=None)
def _partitions(k: int, largest: int) -> tuple[tuple[int, ...], ...]:
    # partitions of k with every part <= largest
    if k == 0:
        return ((),)
    out = []
    for first in range(min(k, largest), 0, -1):
        for rest in _partitions(k - first, first):
            out.append((first,) + rest)
    return tuple(out)


def _partition_log_prob(part: Partition, T: int, log_tree: np.ndarray, log_zero: float) -> float:
    mult = part.multiplicities
    used = sum(mult.values())
    if used > T:
        return -math.inf
    logp = math.lgamma(T + 1) - math.lgamma(T - used + 1)
    for xi, q in mult.items():
        if xi >= log_tree.size or log_tree[xi] == -math.inf:
            return -math.inf
        logp += q * log_tree[xi] - math.lgamma(q + 1)
    if T - used:
        logp += (T - used) * log_zero
    return logp


def strategy2_pmf_partitions(params: NullModelParams, k: int, cap: int = PARTITION_CAP) -> float:
    """Forest-level count pmf by summing multinomial terms over partitions of k."""
    _require(params, Strategy.PER_TREE)
    if k < 0:
        raise ValueError("k must be nonnegative")
    tree = strategy2_per_tree_vector(params)
    T = params.num_trees
    if k == 0:
        return float(tree[0] ** T)
    if k > cap:
        raise CapacityError(
            f"k={k} exceeds the partition cap {cap}; use strategy2_pmf_convolution instead"
        )
    with np.errstate(divide="ignore"):
        log_tree = np.log(tree)
    log_zero = float(log_tree[0])
    total = 0.0
    for part in enumerate_partitions(k, cap):
        lp = _partition_log_prob(part, T, log_tree, log_zero)
        if lp > -math.inf:
            total += math.exp(lp)
    return total


def strategy2_pmf_convolution(params: NullModelParams, k_max: int | None = None) -> np.ndarray:
    """T-fold self-convolution of the per-tree pmf, truncated at k_max."""
    _require(params, Strategy.PER_TREE)
    if k_max is None:
        k_max = params.node_budget
    if k_max < 0:
        raise ValueError("k_max must be nonnegative")
    tree = strategy2_per_tree_vector(params)
    out = np.zeros(k_max + 1)
    out[0] = 1.0
    acc = out[:1].copy()
    for _ in range(params.num_trees):
        acc = np.convolve(acc, tree)[: k_max + 1]
    out[: acc.size] = acc
    return out


def null_pmf(params: NullModelParams) -> np.ndarray:
    """Full pmf of the forest-level count over 0..node_budget."""
    if params.strategy is Strategy.PER_NODE:
        return strategy1_pmf_vector(params)
    return strategy2_pmf_convolution(params)


def tail_vector(params: NullModelParams) -> np.ndarray:
    """P(count > kappa) for kappa = 0..node_budget."""
    pmf = null_pmf(params)
    # sum the upper terms directly; 1 - cdf loses small tails to cancellation
    upper = np.cumsum(pmf[::-1])[::-1]
    tail = np.append(upper[1:], 0.0)
    return np.clip(tail, 0.0, 1.0)


def tail_prob(params: NullModelParams, kappa: int) -> float:
    """P(count > kappa) under the null."""
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    tails = tail_vector(params)
    if kappa >= tails.size:
        return 0.0
    return float(tails[kappa])


def expected_false_positives(params: NullModelParams, kappa: int) -> float:
    return tail_prob(params, kappa) * params.total_features


def solve_threshold(params: NullModelParams, alpha: float) -> ThresholdDecision:
    """Smallest kappa in [0, node budget) whose null tail is at most alpha."""
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    tails = tail_vector(params)
    budget = params.node_budget
    for kappa in range(budget):
        if tails[kappa] <= alpha:
            t = float(tails[kappa])
            return ThresholdDecision(alpha, kappa, t, t * params.total_features)
    raise InfeasibleThresholdError(
        f"no kappa in [0, {budget}) has tail <= {alpha} for {params}"
    )
