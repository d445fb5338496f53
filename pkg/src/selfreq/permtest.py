"""Label-permutation baseline for selection-frequency significance."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .forest import Dataset, ForestConfig, train_forest

DEFAULT_PERMUTATIONS = 250


@dataclass(frozen=True)
class PermTestResult:
    observed_counts: np.ndarray
    p_values: np.ndarray
    num_permutations: int
    warnings: tuple[str, ...] = field(default=())


def permutation_seeds(master_seed: int, num_permutations: int) -> list[int]:
    """One independent 64-bit seed per permutation, derived from the master seed."""
    ss = np.random.SeedSequence([master_seed % 2**64, 0x9E37])
    return [int(s.generate_state(2, np.uint32).view(np.uint64)[0]) for s in ss.spawn(num_permutations)]


def _permuted_counts(data: Dataset, config: ForestConfig, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    labels = rng.permutation(data.labels)
    forest_seed = int(rng.integers(0, 2**63))
    return train_forest(replace(config, rng_seed=forest_seed, n_jobs=1), data.with_labels(labels)).selection_counts


def permutation_pvalues(
    data: Dataset,
    config: ForestConfig,
    num_permutations: int = DEFAULT_PERMUTATIONS,
    alpha: float | None = None,
    seeds: list[int] | None = None,
    n_jobs: int = 1,
) -> PermTestResult:
    """Per-feature p-values of the observed selection counts against permuted-label forests.

    p = (1 + #{b : count_b >= observed}) / (B + 1).  ``seeds`` overrides the
    per-permutation seeds derived from ``config.rng_seed``.
    """
    if num_permutations < 1:
        raise ValueError("need at least one permutation")
    if seeds is None:
        seeds = permutation_seeds(config.rng_seed, num_permutations)
    elif len(seeds) != num_permutations:
        raise ValueError("one seed per permutation required")

    observed = train_forest(config, data).selection_counts

    def run(seed):
        return _permuted_counts(data, config, seed)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            perm = list(pool.map(run, seeds))
    else:
        perm = [run(s) for s in seeds]

    exceed = np.zeros(observed.size, dtype=np.int64)
    for counts in perm:
        exceed += counts >= observed
    pvals = (1.0 + exceed) / (num_permutations + 1)

    warnings = []
    if alpha is not None and 1.0 / (num_permutations + 1) > alpha:
        warnings.append(
            f"{num_permutations} permutations cannot reach p <= {alpha}; smallest p is {1 / (num_permutations + 1):.4g}"
        )
    return PermTestResult(observed, pvals, num_permutations, tuple(warnings))


def mark_relevant(result: PermTestResult, alpha: float) -> np.ndarray:
    return np.flatnonzero(result.p_values <= alpha)
