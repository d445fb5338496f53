"""Command line entry point: gen, train, threshold, permtest, sweep, calibrate."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import datagen, harness
from .forest import ForestConfig, train_forest
from .io import read_dataset, write_dataset, write_indices, write_table
from .null_model import NullModelParams, solve_threshold
from .permtest import DEFAULT_PERMUTATIONS, permutation_pvalues


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _forest_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="dataset CSV (label first, then features)")
    p.add_argument("--header", action="store_true", help="dataset CSV has a header row")
    p.add_argument("--trees", "-T", type=int, required=True)
    p.add_argument("--subset", "--fn", type=int, required=True, help="features drawn per node/tree")
    p.add_argument("--strategy", choices=["per-node", "per-tree"], default="per-node")
    p.add_argument("--bagging", type=float, default=0.5)
    p.add_argument("--min-split", type=int, default=5)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)


def _forest_config(a) -> ForestConfig:
    return ForestConfig(a.trees, a.subset, a.strategy, a.bagging, a.min_split, a.max_depth, a.seed, a.jobs)


def cmd_gen(a) -> None:
    if a.generator == "independent":
        if a.features is None:
            raise ValueError("--features is required for the independent generator")
        F = a.features
        N = a.relevant if a.relevant is not None else int(round(a.relevant_fraction * F))
        data, truth = datagen.gen_independent(
            datagen.IndepGenConfig(a.samples, F, N, a.rho, a.sigma, a.seed)
        )
    else:
        model = datagen.fit_latent_model(
            datagen.make_synthetic_source(a.grid_size, a.smoothness, a.source_columns, a.source_seed)
        )
        F = a.grid_size**2
        N = a.relevant if a.relevant is not None else int(round(a.relevant_fraction * F))
        region = datagen.patch_region(a.grid_size, N / F)
        data, truth = datagen.gen_correlated(model, region, a.rho, a.samples, a.seed)
    write_dataset(data, a.out, header=a.header)
    truth_path = a.truth or str(Path(a.out).with_suffix("")) + ".truth.csv"
    write_indices(truth, truth_path)


def cmd_train(a) -> None:
    data = read_dataset(a.data, a.header)
    forest = train_forest(_forest_config(a), data)
    rows = [{"feature": i, "selection_count": int(c)} for i, c in enumerate(forest.selection_counts)]
    _emit(write_table(["feature", "selection_count"], rows), a.out)
    print(f"trees={forest.num_trees} subset_size={a.subset} strategy={a.strategy} "
          f"avg_internal_nodes={forest.avg_internal_nodes:.6g}", file=sys.stderr)


def cmd_threshold(a) -> None:
    params = NullModelParams(a.features, a.subset, a.trees, a.nodes, a.strategy)
    rows = []
    for alpha in a.alpha:
        d = solve_threshold(params, alpha)
        rows.append({"alpha": d.alpha, "kappa_star": d.kappa_star, "tail_prob": d.tail_prob,
                     "expected_fp": d.expected_fp})
    _emit(write_table(["alpha", "kappa_star", "tail_prob", "expected_fp"], rows), a.out)


def cmd_permtest(a) -> None:
    data = read_dataset(a.data, a.header)
    res = permutation_pvalues(data, _forest_config(a), a.permutations, alpha=a.alpha, n_jobs=a.jobs)
    for w in res.warnings:
        print(f"warning: {w}", file=sys.stderr)
    rows = [{"index": i, "observed_count": int(c), "p_value": p}
            for i, (c, p) in enumerate(zip(res.observed_counts, res.p_values))]
    _emit(write_table(["index", "observed_count", "p_value"], rows), a.out)


def cmd_sweep(a) -> None:
    specs = harness.load_spec(a.spec, seed=a.seed, output_path=a.out)
    report = harness.run_sweep(specs, n_jobs=a.jobs)
    if not specs[0].output_path:
        sys.stdout.write(report.to_csv())


def cmd_calibrate(a) -> None:
    spec = harness.load_calibration(a.spec, seed=a.seed, output_path=a.out)
    if a.jobs is not None:
        spec = replace(spec, n_jobs=a.jobs)
    report = harness.run_null_calibration(spec)
    if not spec.output_path:
        sys.stdout.write(report.to_csv())


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="selfreq", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset and its ground truth")
    p.add_argument("--generator", choices=["independent", "correlated"], default="independent")
    p.add_argument("--samples", "-S", type=int, required=True)
    p.add_argument("--features", "-F", type=int)
    p.add_argument("--relevant", "-N", type=int)
    p.add_argument("--relevant-fraction", type=float, default=0.0)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--sigma", type=float, default=5.0)
    p.add_argument("--grid-size", type=int, default=32)
    p.add_argument("--smoothness", type=float, default=2.0)
    p.add_argument("--source-columns", type=int, default=315)
    p.add_argument("--source-seed", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--header", action="store_true", help="write a header row")
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help="ground-truth CSV path (default: <out>.truth.csv)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a forest and write selection counts")
    _forest_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("threshold", help="selection-count threshold from the null model")
    p.add_argument("--features", "-F", type=int, required=True)
    p.add_argument("--subset", "--fn", type=int, required=True)
    p.add_argument("--trees", "-T", type=int, required=True)
    p.add_argument("--nodes", "-K", type=float, required=True, help="average internal nodes per tree")
    p.add_argument("--strategy", choices=["per-node", "per-tree"], default="per-node")
    p.add_argument("--alpha", type=float, action="append", required=True)
    p.add_argument("--seed", type=int, default=0, help=argparse.SUPPRESS)
    p.add_argument("--out")
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("permtest", help="label-permutation p-values of selection counts")
    _forest_args(p)
    p.add_argument("--permutations", "-B", type=int, default=DEFAULT_PERMUTATIONS)
    p.add_argument("--alpha", type=float, default=None, help="warn if B is too small for this level")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_permtest)

    p = sub.add_parser("sweep", help="run an experiment sweep from a spec file")
    p.add_argument("--spec", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the spec's master seed")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("calibrate", help="null calibration: predicted vs observed tail per threshold")
    p.add_argument("--spec", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"selfreq {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
