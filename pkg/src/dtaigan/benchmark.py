"""Synthetic constrained design problem, baselines, and the comparison harness."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .core import (
    Dataset,
    Schema,
    TargetSpec,
    compute_targets,
    fit_normalizer,
    format_real,
    write_designs,
)
from .errors import ConfigError, DataError, DomainError, DtaiganError, ParameterError
from .gan import GanConfig, generate_designs, train, write_log
from .metrics import METRIC_LABELS, MetricsConfig, evaluate_all
from .nn import TrainConfig, train_surrogates

log = logging.getLogger(__name__)

BASELINES = ("dataset", "interpolation")

_RING8_CENTERS = np.full((3, 8), 0.5)
_RING8_CENTERS[0, :2] = (0.25, 0.25)
_RING8_CENTERS[1, :2] = (0.75, 0.25)
_RING8_CENTERS[2, :2] = (0.5, 0.75)


def ring8_performance(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    sq = ((x[:, None, :] - _RING8_CENTERS[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-sq / 0.8)


def ring8_feasible(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    return (x[:, 0] + x[:, 1] <= 1.4) & (np.abs(x[:, 2] - x[:, 3]) <= 0.6)


@dataclass(frozen=True)
class ProblemSpec:
    problem_id: str
    design_dim: int
    n_objectives: int
    performance: Callable[[np.ndarray], np.ndarray]
    feasibility: Callable[[np.ndarray], np.ndarray]
    schema: Schema

    def oracle(self, designs: np.ndarray):
        """Batch oracle over raw designs: (performance, feasible)."""
        x = np.asarray(designs, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.design_dim:
            raise DomainError(f"expected designs of width {self.design_dim}, got {x.shape}")
        if np.any(x < 0) or np.any(x > 1):
            raise DomainError("oracle is defined on the unit box only")
        return self.performance(x), self.feasibility(x)


RING8 = ProblemSpec(
    problem_id="ring8",
    design_dim=8,
    n_objectives=3,
    performance=ring8_performance,
    feasibility=ring8_feasible,
    schema=Schema.from_dict({
        "design_continuous": [{"name": f"x{i + 1}", "bounds": [0.0, 1.0]} for i in range(8)],
        "performance": [{"name": f"p{k + 1}", "direction": "maximize"} for k in range(3)],
        "feasibility": "feasible",
    }),
)

PROBLEMS = {RING8.problem_id: RING8}


def get_problem(problem_id: str) -> ProblemSpec:
    try:
        return PROBLEMS[problem_id]
    except KeyError:
        raise ConfigError(f"unknown problem {problem_id!r}; known: {sorted(PROBLEMS)}") from None


def oracle_eval(x: np.ndarray, problem: ProblemSpec = RING8):
    """Exact performance and feasibility of a single design row."""
    perf, feasible = problem.oracle(np.asarray(x, dtype=float).reshape(1, -1))
    return perf[0], bool(feasible[0])


def make_synthetic_dataset(problem: ProblemSpec, n: int, seed: int) -> Dataset:
    """60% uniform rows plus 40% from a clipped Gaussian at 0.4 (sd 0.15), oracle-labelled."""
    if n < 100:
        raise ParameterError("synthetic datasets need at least 100 rows")
    rng = np.random.default_rng(seed)
    n_uniform = int(round(0.6 * n))
    uniform = rng.uniform(size=(n_uniform, problem.design_dim))
    cluster = np.clip(rng.normal(0.4, 0.15, size=(n - n_uniform, problem.design_dim)), 0.0, 1.0)
    x = np.vstack([uniform, cluster])[rng.permutation(n)]
    perf, feasible = problem.oracle(x)
    return Dataset(problem.schema, x, perf, feasible)


def baseline_generate(data: Dataset, method: str, n: int, seed: int, lam=None) -> np.ndarray:
    """Raw-unit designs from the dataset-sampling or interpolation baseline.

    Both draw from feasible rows only. ``lam`` overrides the interpolation
    weights (used to probe the endpoints).
    """
    feasible = data.designs[data.feasible]
    if feasible.shape[0] < 2:
        raise DataError("baselines need at least two feasible rows")
    rng = np.random.default_rng(seed)
    if method == "dataset":
        idx = rng.choice(feasible.shape[0], size=n, replace=n > feasible.shape[0])
        return feasible[idx].copy()
    if method != "interpolation":
        raise ParameterError(f"unknown baseline {method!r}")
    a = rng.integers(feasible.shape[0], size=n)
    b = rng.integers(feasible.shape[0], size=n)
    lam = rng.uniform(size=n) if lam is None else np.broadcast_to(np.asarray(lam, dtype=float), (n,))
    xa, xb = feasible[a], feasible[b]
    out = lam[:, None] * xa + (1.0 - lam[:, None]) * xb
    c = data.schema.n_continuous
    out[:, c:] = np.where((lam >= 0.5)[:, None], xa[:, c:], xb[:, c:])
    return out


@dataclass(frozen=True)
class TargetConfig:
    percentile: float = 75.0
    alpha: tuple[float, ...] | None = None
    beta: tuple[float, ...] | None = None


@dataclass(frozen=True)
class SurrogateConfig:
    regressor: TrainConfig = field(default_factory=lambda: TrainConfig(loss="mse", seed=0))
    classifier: TrainConfig = field(default_factory=lambda: TrainConfig(loss="bce", seed=1))


@dataclass(frozen=True)
class BenchmarkConfig:
    problem: str = "ring8"
    dataset_size: int = 4500
    seeds: tuple[int, ...] = (0, 1, 2)
    variants: tuple[str, ...] = ("proposed", "no_dtai", "no_clf", "no_dtai_no_clf", "vanilla")
    baselines: tuple[str, ...] = BASELINES
    eval_count: int = 250

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("benchmark needs at least one seed")
        if self.eval_count < 2:
            raise ConfigError("eval_count must be at least 2")
        for b in self.baselines:
            if b not in BASELINES:
                raise ConfigError(f"unknown baseline {b!r}")


def seeded(cfg, seed: int):
    """Copy of a train/GAN config with its seed offset by the benchmark seed."""
    return replace(cfg, seed=cfg.seed + 1000 * seed)


def _run_seed(seed, exp, out_dir: Path, digest: str, problem: ProblemSpec):
    """All (seed, method) cells for one seed; returns result rows in method order."""
    bench = exp.benchmark
    rows = []
    methods = list(bench.baselines) + list(bench.variants)
    data = make_synthetic_dataset(problem, bench.dataset_size, seed)
    norm = fit_normalizer(data)
    targets = compute_targets(data, exp.targets.percentile, exp.targets.alpha, exp.targets.beta)
    surrogates = None
    try:
        surrogates = train_surrogates(
            data, norm, seeded(exp.surrogate.regressor, seed), seeded(exp.surrogate.classifier, seed)
        )
    except DtaiganError as exc:
        log.error("seed %d: surrogate training failed: %s", seed, exc)
    comment = f"config_digest={digest} seed={seed}"
    for method in methods:
        cell_dir = out_dir / str(seed) / method
        start = time.perf_counter()
        try:
            cell_dir.mkdir(parents=True, exist_ok=True)
            if method in BASELINES:
                designs = baseline_generate(data, method, bench.eval_count, seed)
            else:
                if surrogates is None:
                    raise DataError("surrogates unavailable for this seed")
                gcfg = replace(seeded(exp.gan, seed), variant=method)
                model, train_log = train(data, surrogates, targets, gcfg)
                write_log(cell_dir / "training_log.csv", train_log, comment)
                designs = generate_designs(model, bench.eval_count, seed)
            report = evaluate_all(designs, data, targets, norm, oracle=problem.oracle, cfg=exp.metrics)
            write_designs(cell_dir / "designs.csv", data.schema, designs, comment)
            report.write(cell_dir, extra={"config_digest": digest, "seed": seed, "method": method,
                                          "targets": targets.to_dict()})
            row = {"seed": seed, "method": method, "status": "ok", **report.scalars()}
        except DtaiganError as exc:
            log.error("seed %d, method %s failed: %s", seed, method, exc)
            row = {"seed": seed, "method": method, "status": f"failed: {exc}",
                   **{key: float("nan") for key in METRIC_LABELS}}
        log.info("seed %d %-16s %.1fs", seed, method, time.perf_counter() - start)
        rows.append(row)
    return rows


def summarize(rows: list[dict], methods: list[str]) -> dict:
    """Median over seeds of every metric, per method (failed cells excluded)."""
    summary = {}
    for method in methods:
        ok = [r for r in rows if r["method"] == method and r["status"] == "ok"]
        summary[method] = {
            key: float(np.median([r[key] for r in ok])) if ok else float("nan")
            for key in METRIC_LABELS
        }
    return summary


def write_summary(path, summary: dict, methods: list[str], comment: str):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric"] + methods)
        for key, label in METRIC_LABELS.items():
            writer.writerow([label] + [format_real(summary[m][key]) for m in methods])


def write_results(path, rows: list[dict], comment: str):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["seed", "method", "status"] + list(METRIC_LABELS))
        for r in rows:
            writer.writerow([r["seed"], r["method"], r["status"]]
                            + [format_real(r[k]) for k in METRIC_LABELS])


def run_benchmark(exp, out_dir, threads: int = 1):
    """Full comparison: every seed x (baselines + variants), median summary.

    ``exp`` is an ExperimentConfig. Writes ``results.csv`` (one row per cell),
    ``summary.csv`` (metrics x methods) and per-cell artifacts under
    ``out_dir/<seed>/<method>/``. Returns (summary, rows).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bench = exp.benchmark
    problem = get_problem(bench.problem)
    digest = exp.digest()
    methods = list(bench.baselines) + list(bench.variants)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_seed = list(pool.map(lambda s: _run_seed(s, exp, out_dir, digest, problem), bench.seeds))
    else:
        per_seed = [_run_seed(s, exp, out_dir, digest, problem) for s in bench.seeds]
    rows = [row for seed_rows in per_seed for row in seed_rows]
    summary = summarize(rows, methods)
    comment = f"config_digest={digest} seeds={','.join(str(s) for s in bench.seeds)}"
    write_results(out_dir / "results.csv", rows, comment)
    write_summary(out_dir / "summary.csv", summary, methods, comment)
    with open(out_dir / "config.json", "w") as fh:
        json.dump(exp.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary, rows
