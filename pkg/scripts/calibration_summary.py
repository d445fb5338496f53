"""Summarize a calibration CSV: worst observed/predicted factor where the prediction is >= a floor."""

from __future__ import annotations

import argparse
import csv
from collections import defaultdict


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("csv", help="output of `selfreq calibrate`")
    ap.add_argument("--floor", type=float, default=1e-2)
    a = ap.parse_args()

    groups = defaultdict(list)
    with open(a.csv, newline="") as fh:
        for row in csv.DictReader(fh):
            groups[(row["strategy"], int(row["subset_size"]), int(row["num_trees"]))].append(row)

    print("strategy,subset_size,num_trees,mean_K,worst_factor,at_kappa,predicted,observed")
    for (strategy, fn, t), rows in sorted(groups.items()):
        worst = (0.0, None, None, None)
        for r in rows:
            pred, obs = float(r["predicted_tail"]), float(r["observed_fpr"])
            if pred < a.floor:
                continue
            factor = float("inf") if obs == 0 else max(obs / pred, pred / obs)
            if factor > worst[0]:
                worst = (factor, r["kappa"], pred, obs)
        factor, k, pred, obs = worst
        print(f"{strategy},{fn},{t},{rows[0]['mean_K']},{factor:.3g},{k},{pred:.4g},{obs:.4g}")


if __name__ == "__main__":
    main()
