"""Monte Carlo of the pure selection process vs the null-model pmf."""

from __future__ import annotations

import argparse

import numpy as np

from selfreq.null_model import NullModelParams, Strategy, null_pmf
from selfreq.simulation import chisquare_gof, simulate_null_counts


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-F", type=int, default=20)
    ap.add_argument("--fn", type=int, default=5)
    ap.add_argument("-T", type=int, default=20)
    ap.add_argument("-K", type=int, default=10)
    ap.add_argument("--forests", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()

    rng = np.random.default_rng(a.seed)
    print("strategy,forests,mean_count,model_mean,chi2,p_value,cells")
    for strategy in Strategy:
        counts = simulate_null_counts(a.F, a.fn, a.T, a.K, strategy, a.forests, rng)
        pmf = null_pmf(NullModelParams(a.F, a.fn, a.T, a.K, strategy))
        stat, p, cells = chisquare_gof(counts, pmf)
        mean = float(np.arange(pmf.size) @ pmf)
        print(f"{strategy.value},{a.forests},{counts.mean():.6g},{mean:.6g},{stat:.6g},{p:.6g},{cells}")


if __name__ == "__main__":
    main()
