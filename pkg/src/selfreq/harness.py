"""Seeded experiment sweeps: generate data, train, threshold, score against ground truth."""

from __future__ import annotations

import configparser
import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import datagen
from .forest import Dataset, ForestConfig, train_forest
from .io import write_table
from .null_model import InfeasibleThresholdError, Strategy, solve_threshold, tail_vector
from .permtest import mark_relevant, permutation_pvalues

log = logging.getLogger(__name__)


def compute_rates(selected, truth, F: int) -> tuple[float, float | None]:
    """(false positive rate, false negative rate); fnr is None when truth is empty."""
    selected = {int(i) for i in selected}
    truth = {int(i) for i in truth}
    if any(not 0 <= t < F for t in truth):
        raise ValueError("truth indices out of range")
    negatives = F - len(truth)
    fpr = len(selected - truth) / negatives if negatives else 0.0
    fnr = len(truth - selected) / len(truth) if truth else None
    return fpr, fnr


@dataclass(frozen=True)
class DataSpec:
    generator: str = "independent"
    sample_count: int = 100
    feature_count: int = 500
    relevant_count: int | None = None
    relevant_fraction: float = 0.0
    rho: float = 0.5
    sigma: float = 5.0
    # correlated generator only
    grid_size: int = 32
    smoothness: float = 2.0
    source_columns: int = 315
    source_seed: int = 0

    def __post_init__(self):
        if self.generator not in ("independent", "correlated"):
            raise ValueError(f"unknown generator {self.generator!r}")
        if self.generator == "correlated":
            object.__setattr__(self, "feature_count", self.grid_size**2)

    @property
    def n_relevant(self) -> int:
        if self.relevant_count is not None:
            return int(self.relevant_count)
        return int(round(self.relevant_fraction * self.feature_count))


@dataclass(frozen=True)
class ExperimentSpec:
    data: DataSpec
    forest: ForestConfig
    alphas: tuple[float, ...] = (0.05, 0.01)
    repetitions: int = 20
    seed: int = 0
    permutations: int = 0
    shuffle_columns: bool = True
    output_path: str | None = None
    n_jobs: int = 1

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.alphas or any(not 0 < a <= 1 for a in self.alphas):
            raise ValueError("alphas must lie in (0, 1]")


SWEEP_COLUMNS = [
    "generator", "strategy", "sample_count", "feature_count", "relevant_count", "rho",
    "num_trees", "subset_size", "bagging_ratio", "min_samples_to_split", "max_depth",
    "repetitions", "seed", "alpha",
    "mean_K", "kappa_star", "predicted_tail", "expected_fp", "fpr", "fnr", "tpr",
    "permutations", "perm_fpr", "perm_fnr", "perm_tpr",
]


@dataclass
class RateReport:
    rows: list[dict]
    records: list[dict] = field(default_factory=list)
    columns: list[str] = field(default_factory=lambda: list(SWEEP_COLUMNS))

    def to_csv(self, path=None) -> str:
        return write_table(self.columns, self.rows, path)

    def __add__(self, other: "RateReport") -> "RateReport":
        return RateReport(self.rows + other.rows, self.records + other.records, self.columns)


# ---- data generation per repetition ----

@lru_cache(maxsize=8)
def _latent_model(grid_size: int, smoothness: float, columns: int, seed: int) -> datagen.LatentModel:
    return datagen.fit_latent_model(datagen.make_synthetic_source(grid_size, smoothness, columns, seed))


def generate(spec: DataSpec, seed: int, shuffle_columns: bool = True) -> tuple[Dataset, np.ndarray]:
    """Dataset and sorted ground-truth relevant indices for one repetition."""
    rng = np.random.default_rng(seed)
    data_seed, perm_seed = (int(s) for s in rng.integers(0, 2**63, size=2))
    if spec.generator == "independent":
        cfg = datagen.IndepGenConfig(
            spec.sample_count, spec.feature_count, spec.n_relevant, spec.rho, spec.sigma, data_seed
        )
        data, truth = datagen.gen_independent(cfg)
    else:
        model = _latent_model(spec.grid_size, spec.smoothness, spec.source_columns, spec.source_seed)
        region = datagen.patch_region(spec.grid_size, spec.n_relevant / spec.feature_count)
        data, truth = datagen.gen_correlated(model, region, spec.rho, spec.sample_count, data_seed)
    if shuffle_columns:
        perm = np.random.default_rng(perm_seed).permutation(data.feature_count)
        data = Dataset(data.features[:, perm], data.labels)
        truth = np.flatnonzero(np.isin(perm, truth))
    return data, truth


def repetition_seeds(master: int, rep: int) -> tuple[int, int, int]:
    """(data, forest, permutation) seeds for one repetition."""
    children = np.random.SeedSequence([master % 2**64, rep]).spawn(3)
    return tuple(int(c.generate_state(2, np.uint32).view(np.uint64)[0]) for c in children)


def _threshold(params, alpha):
    try:
        dec = solve_threshold(params, alpha)
        return dec.kappa_star, dec.tail_prob
    except InfeasibleThresholdError:
        # nothing below the node budget qualifies: select no feature
        return params.node_budget, 0.0


def run_repetition(spec: ExperimentSpec, rep: int) -> dict:
    data_seed, forest_seed, perm_seed = repetition_seeds(spec.seed, rep)
    data, truth = generate(spec.data, data_seed, spec.shuffle_columns)
    cfg = replace(spec.forest, rng_seed=forest_seed)
    forest = train_forest(cfg, data)
    params = forest.null_params()
    F = data.feature_count
    out = {"rep": rep, "K": forest.avg_internal_nodes, "truth": truth.tolist(), "alphas": {}}

    perm_result = None
    if spec.permutations:
        perm_result = permutation_pvalues(data, replace(cfg, rng_seed=perm_seed), spec.permutations)

    for alpha in spec.alphas:
        kappa, tail = _threshold(params, alpha)
        selected = np.flatnonzero(forest.selection_counts > kappa)
        fpr, fnr = compute_rates(selected, truth, F)
        entry = {"kappa": kappa, "tail": tail, "fpr": fpr, "fnr": fnr, "n_selected": selected.size}
        if perm_result is not None:
            pf, pn = compute_rates(mark_relevant(perm_result, alpha), truth, F)
            entry.update(perm_fpr=pf, perm_fnr=pn)
        out["alphas"][alpha] = entry
    return out


def _mean(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def summarize(spec: ExperimentSpec, reps: list[dict]) -> list[dict]:
    reps = sorted(reps, key=lambda r: r["rep"])
    d, fc = spec.data, spec.forest
    base = {
        "generator": d.generator, "strategy": fc.strategy.value, "sample_count": d.sample_count,
        "feature_count": d.feature_count, "relevant_count": d.n_relevant, "rho": d.rho,
        "num_trees": fc.num_trees, "subset_size": fc.subset_size, "bagging_ratio": fc.bagging_ratio,
        "min_samples_to_split": fc.min_samples_to_split,
        "max_depth": "none" if fc.max_depth is None else fc.max_depth,
        "repetitions": spec.repetitions, "seed": spec.seed,
    }
    mean_K = _mean([r["K"] for r in reps])
    rows = []
    for alpha in spec.alphas:
        es = [r["alphas"][alpha] for r in reps]
        tail = _mean([e["tail"] for e in es])
        fnr = _mean([e["fnr"] for e in es])
        row = dict(base, alpha=alpha, mean_K=mean_K,
                   kappa_star=_mean([e["kappa"] for e in es]),
                   predicted_tail=tail, expected_fp=tail * d.feature_count,
                   fpr=_mean([e["fpr"] for e in es]), fnr=fnr,
                   tpr=None if fnr is None else 1.0 - fnr)
        if spec.permutations:
            pfnr = _mean([e["perm_fnr"] for e in es])
            row.update(permutations=spec.permutations, perm_fpr=_mean([e["perm_fpr"] for e in es]),
                       perm_fnr=pfnr, perm_tpr=None if pfnr is None else 1.0 - pfnr)
        rows.append(row)
    return rows


def _run_job(job):
    spec, rep = job
    return run_repetition(spec, rep)


def _map_jobs(jobs, n_jobs):
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(_run_job, jobs))
    return [_run_job(j) for j in jobs]


def run_sweep(spec: ExperimentSpec | list[ExperimentSpec], n_jobs: int | None = None) -> RateReport:
    """Run every repetition of every grid point; write the CSV if an output path is set."""
    specs = spec if isinstance(spec, list) else [spec]
    jobs = [(s, r) for s in specs for r in range(s.repetitions)]
    workers = n_jobs if n_jobs is not None else max(s.n_jobs for s in specs)
    results = _map_jobs(jobs, workers)
    report = RateReport([])
    pos = 0
    for s in specs:
        reps = results[pos : pos + s.repetitions]
        pos += s.repetitions
        report.rows.extend(summarize(s, reps))
        report.records.extend(dict(r, point=len(report.rows)) for r in reps)
        log.info("point done: %s", report.rows[-1])
    out = specs[0].output_path
    if out:
        try:
            report.to_csv(out)
        except OSError as exc:
            raise OSError(f"cannot write sweep results to {out}: {exc.strerror or exc}") from exc
    return report


# ---- null calibration ----

@dataclass(frozen=True)
class CalibrationSpec:
    data: DataSpec
    forest: ForestConfig
    subset_sizes: tuple[int, ...] = (3, 5, 7)
    tree_counts: tuple[int, ...] = (20, 40)
    strategies: tuple[Strategy, ...] = (Strategy.PER_NODE, Strategy.PER_TREE)
    repetitions: int = 100
    seed: int = 0
    kappa_max: int | None = None
    output_path: str | None = None
    n_jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "strategies", tuple(Strategy.parse(s) for s in self.strategies))


CALIBRATION_COLUMNS = [
    "strategy", "sample_count", "feature_count", "relevant_count", "subset_size", "num_trees",
    "repetitions", "kappa", "mean_K", "predicted_tail", "observed_fpr", "observed_q05", "observed_q95",
]


def _calibration_job(job):
    data_spec, cfg, seed, rep = job
    data_seed, forest_seed, _ = repetition_seeds(seed, rep)
    data, truth = generate(data_spec, data_seed)
    forest = train_forest(replace(cfg, rng_seed=forest_seed), data)
    null = np.setdiff1d(np.arange(data.feature_count), truth)
    return forest.avg_internal_nodes, forest.selection_counts[null], tail_vector(forest.null_params())


def run_null_calibration(spec: CalibrationSpec) -> RateReport:
    """Per threshold: mean predicted tail vs observed fraction of null features above it."""
    rows, records = [], []
    points = list(itertools.product(spec.strategies, spec.subset_sizes, spec.tree_counts))
    jobs = []
    for strategy, fn, t in points:
        cfg = replace(spec.forest, strategy=strategy, subset_size=fn, num_trees=t)
        jobs.extend((spec.data, cfg, spec.seed, r) for r in range(spec.repetitions))
    if spec.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.n_jobs) as pool:
            results = list(pool.map(_calibration_job, jobs))
    else:
        results = [_calibration_job(j) for j in jobs]

    for i, (strategy, fn, t) in enumerate(points):
        chunk = results[i * spec.repetitions : (i + 1) * spec.repetitions]
        if spec.kappa_max is not None:
            kmax = spec.kappa_max
        else:
            kmax = max(int(max((c.max(initial=0) for _, c, _ in chunk), default=0)),
                       max(int(np.searchsorted(-tv, -1e-6)) for _, _, tv in chunk))
        kappas = np.arange(kmax + 1)
        pred = np.zeros((len(chunk), kappas.size))
        obs = np.zeros((len(chunk), kappas.size))
        for r, (_, counts, tv) in enumerate(chunk):
            n = min(tv.size, kappas.size)
            pred[r, :n] = tv[:n]
            obs[r] = (counts[:, None] > kappas[None, :]).mean(axis=0) if counts.size else 0.0
        mean_K = float(np.mean([k for k, _, _ in chunk]))
        for k in kappas:
            rows.append({
                "strategy": strategy.value, "sample_count": spec.data.sample_count,
                "feature_count": spec.data.feature_count, "relevant_count": spec.data.n_relevant,
                "subset_size": fn, "num_trees": t, "repetitions": spec.repetitions, "kappa": int(k),
                "mean_K": mean_K, "predicted_tail": pred[:, k].mean(), "observed_fpr": obs[:, k].mean(),
                "observed_q05": np.quantile(obs[:, k], 0.05), "observed_q95": np.quantile(obs[:, k], 0.95),
            })
        records.append({"strategy": strategy.value, "subset_size": fn, "num_trees": t,
                        "predicted": pred.mean(0), "observed": obs.mean(0), "mean_K": mean_K})
    report = RateReport(rows, records, list(CALIBRATION_COLUMNS))
    if spec.output_path:
        report.to_csv(spec.output_path)
    return report


# ---- spec files ----

def _split(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _scalar(text: str):
    low = text.lower()
    if low in ("none", "null", ""):
        return None
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _resolve_count(value, F: int) -> int:
    """Integers pass through; 'F/10' style ratios of the feature count are resolved."""
    if isinstance(value, str) and value.replace(" ", "").upper().startswith("F/"):
        return max(1, int(F // float(value.split("/", 1)[1])))
    return int(value)


DATA_KEYS = {f.name for f in fields(DataSpec)}
FOREST_KEYS = {"num_trees", "subset_size", "strategy", "bagging_ratio", "min_samples_to_split", "max_depth"}


def _section(cp, name) -> dict[str, list]:
    if not cp.has_section(name):
        return {}
    return {k: [_scalar(v) for v in _split(raw)] or [None] for k, raw in cp.items(name)}


def _grid(sec: dict[str, list]) -> list[dict]:
    keys = list(sec)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(sec[k] for k in keys))]


def _check_keys(sec, allowed, name):
    unknown = set(sec) - allowed
    if unknown:
        raise ValueError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")


def _build_forest(fv: dict, F: int) -> ForestConfig:
    kw = {k: v for k, v in fv.items() if v is not None or k == "max_depth"}
    kw["num_trees"] = _resolve_count(kw.get("num_trees", "F/10"), F)
    kw["subset_size"] = _resolve_count(kw.get("subset_size", "F/20"), F)
    return ForestConfig(**kw)


def load_spec(path, seed: int | None = None, output_path: str | None = None) -> list[ExperimentSpec]:
    """Parse a sweep spec file into one ExperimentSpec per grid point.

    Sections [experiment], [data], [forest]; one ``key = value`` per line.
    Comma-separated values in [data] and [forest] are swept as a grid;
    ``alphas`` is always a list.
    """
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc
    exp = {k: v for k, v in cp.items("experiment")} if cp.has_section("experiment") else {}
    _check_keys(exp, {"alphas", "repetitions", "seed", "permutations", "shuffle_columns", "output", "n_jobs"}, "experiment")
    data_sec, forest_sec = _section(cp, "data"), _section(cp, "forest")
    _check_keys(data_sec, DATA_KEYS, "data")
    _check_keys(forest_sec, FOREST_KEYS, "forest")

    common = dict(
        alphas=tuple(float(a) for a in _split(exp.get("alphas", "0.05, 0.01"))),
        repetitions=int(exp.get("repetitions", 20)),
        seed=int(seed if seed is not None else exp.get("seed", 0)),
        permutations=int(exp.get("permutations", 0)),
        shuffle_columns=_scalar(exp.get("shuffle_columns", "true")) is True,
        output_path=output_path or exp.get("output"),
        n_jobs=int(exp.get("n_jobs", 1)),
    )
    specs = []
    for dv in _grid(data_sec) or [{}]:
        dspec = DataSpec(**{k: v for k, v in dv.items() if v is not None or k == "relevant_count"})
        for fv in _grid(forest_sec) or [{}]:
            specs.append(ExperimentSpec(dspec, _build_forest(fv, dspec.feature_count), **common))
    return specs


def load_calibration(path, seed: int | None = None, output_path: str | None = None) -> CalibrationSpec:
    """Parse [calibration], [data] and [forest] sections; lists are not expanded in [data]."""
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc
    cal = dict(cp.items("calibration")) if cp.has_section("calibration") else {}
    _check_keys(cal, {"subset_sizes", "tree_counts", "strategies", "repetitions", "seed", "kappa_max", "output", "n_jobs"}, "calibration")
    data_sec = {k: v[0] for k, v in _section(cp, "data").items()}
    _check_keys(data_sec, DATA_KEYS, "data")
    dspec = DataSpec(**{k: v for k, v in data_sec.items() if v is not None or k == "relevant_count"})
    forest_sec = {k: v[0] for k, v in _section(cp, "forest").items()}
    _check_keys(forest_sec, FOREST_KEYS - {"num_trees", "subset_size", "strategy"}, "forest")
    forest = ForestConfig(num_trees=1, subset_size=1, **{k: v for k, v in forest_sec.items() if v is not None or k == "max_depth"})
    kmax = _scalar(cal.get("kappa_max", "none"))
    return CalibrationSpec(
        data=dspec,
        forest=forest,
        subset_sizes=tuple(_resolve_count(_scalar(v), dspec.feature_count) for v in _split(cal.get("subset_sizes", "3, 5, 7"))),
        tree_counts=tuple(_resolve_count(_scalar(v), dspec.feature_count) for v in _split(cal.get("tree_counts", "20, 40"))),
        strategies=tuple(Strategy.parse(v) for v in _split(cal.get("strategies", "per-node, per-tree"))),
        repetitions=int(cal.get("repetitions", 100)),
        seed=int(seed if seed is not None else cal.get("seed", 0)),
        kappa_max=kmax,
        output_path=output_path or cal.get("output"),
        n_jobs=int(cal.get("n_jobs", 1)),
    )
