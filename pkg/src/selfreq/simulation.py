"""Direct Monte Carlo of the idealized null selection process.

Every node (or every tree, for per-tree subsampling) draws a uniform feature
subset and the winner is uniform within the subset.  Used to check the
closed-form null pmf without going through it.
"""

from __future__ import annotations

import numpy as np
from scipy import stats

from .null_model import Strategy


def _random_subsets(rng: np.random.Generator, rows: int, F: int, Fn: int) -> np.ndarray:
    # the Fn smallest of F iid uniform keys form a uniform Fn-subset
    keys = rng.random((rows, F))
    return np.argpartition(keys, Fn - 1, axis=1)[:, :Fn] if Fn < F else np.tile(np.arange(F), (rows, 1))


def simulate_null_counts(
    F: int,
    Fn: int,
    T: int,
    K: int,
    strategy: Strategy | str,
    n_forests: int,
    rng: np.random.Generator,
    feature: int = 0,
    chunk: int = 2000,
) -> np.ndarray:
    """Selection count of ``feature`` in each of ``n_forests`` simulated forests."""
    strategy = Strategy.parse(strategy)
    out = np.empty(n_forests, dtype=np.int64)
    done = 0
    while done < n_forests:
        m = min(chunk, n_forests - done)
        if strategy is Strategy.PER_NODE:
            subsets = _random_subsets(rng, m * T * K, F, Fn)
            pick = rng.integers(0, Fn, size=m * T * K)
            winners = subsets[np.arange(m * T * K), pick].reshape(m, T * K)
        else:
            subsets = _random_subsets(rng, m * T, F, Fn)  # one per tree
            pick = rng.integers(0, Fn, size=(m * T, K))
            winners = np.take_along_axis(subsets, pick, axis=1).reshape(m, T * K)
        out[done : done + m] = (winners == feature).sum(axis=1)
        done += m
    return out


def chisquare_gof(observed_counts: np.ndarray, pmf: np.ndarray, min_expected: float = 5.0):
    """Chi-square goodness of fit of integer samples against a pmf on 0..len(pmf)-1.

    Adjacent cells are pooled from both ends until each has expected count
    >= ``min_expected``.  Returns (statistic, p-value, number of cells).
    """
    n = observed_counts.size
    obs = np.bincount(observed_counts, minlength=pmf.size)[: pmf.size].astype(float)
    if observed_counts.max(initial=0) >= pmf.size:
        raise ValueError("sample outside the pmf support")
    exp = pmf * n
    cells_o, cells_e = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(obs, exp):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            cells_o.append(acc_o)
            cells_e.append(acc_e)
            acc_o = acc_e = 0.0
    if cells_e:
        cells_o[-1] += acc_o
        cells_e[-1] += acc_e
    else:
        cells_o, cells_e = [acc_o], [acc_e]
    cells_o, cells_e = np.array(cells_o), np.array(cells_e)
    cells_e *= cells_o.sum() / cells_e.sum()
    if cells_o.size < 2:
        return 0.0, 1.0, 1
    stat, p = stats.chisquare(cells_o, cells_e)
    return float(stat), float(p), int(cells_o.size)
