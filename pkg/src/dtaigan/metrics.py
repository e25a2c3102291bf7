"""Evaluation metrics for generated design sets, plus KDE export for density plots."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from .core import (
    MINIMIZE,
    Dataset,
    Normalizer,
    TargetSpec,
    format_real,
    positive_performance,
    target_ratios,
)
from .dtai import dtai_score
from .errors import ConfigError, DataError, DomainError

METRIC_LABELS = {
    "mean_tsr": "Mean Target Success Rate (TSR)",
    "feasibility_rate": "Feasibility Rate (GFR)",
    "mean_dtai": "Mean Design Target Achievement Index (DTAI)",
    "mean_mtr": "Mean Minimum Target Ratio (MTR)",
    "hypervolume": "Hypervolume (HV)",
    "mean_novelty": "Mean Design Novelty (DN)",
    "design_space_diversity": "Mean Design Space Diversity",
    "performance_space_diversity": "Mean Performance Space Diversity (PSD)",
}
PER_DESIGN_COLUMNS = ("design_id", "tsr", "mtr", "dtai", "feasible", "novelty")
EXACT_HV_MAX_OBJECTIVES = 4


def target_metrics(perf: np.ndarray, targets: TargetSpec):
    """Per-design target success rate, minimum target ratio and DTAI."""
    r = target_ratios(perf, targets)
    tsr = np.mean(r >= 1.0, axis=1)
    mtr = r.min(axis=1)
    return tsr, mtr, dtai_score(r, targets).dtai


def feasibility_flags(designs: np.ndarray, oracle=None, surrogates=None,
                      normalizer: Normalizer | None = None, threshold: float = 0.5):
    """Per-design feasibility and its provenance ("exact" or "estimated")."""
    if oracle is not None:
        _, feasible = oracle(designs)
        return np.asarray(feasible, dtype=bool), "exact"
    if surrogates is not None:
        norm = normalizer or surrogates.normalizer
        prob = surrogates.predict_feasibility(norm.transform_designs(designs))
        return prob >= threshold, "estimated"
    raise ConfigError("feasibility needs an oracle or a classifier")


def feasibility_rate(designs, oracle=None, surrogates=None, normalizer=None, threshold=0.5):
    flags, source = feasibility_flags(designs, oracle, surrogates, normalizer, threshold)
    return float(np.mean(flags)), source


def _hv2(points: np.ndarray, ref: np.ndarray) -> float:
    order = np.argsort(-points[:, 0], kind="stable")
    xs = points[order, 0]
    ys = points[order, 1]
    area = 0.0
    ymax = ref[1]
    for i in range(len(xs)):
        ymax = max(ymax, ys[i])
        x_next = xs[i + 1] if i + 1 < len(xs) else ref[0]
        area += (xs[i] - x_next) * (ymax - ref[1])
    return area


def _hv_sweep(points: np.ndarray, ref: np.ndarray) -> float:
    T = points.shape[1]
    if points.shape[0] == 0:
        return 0.0
    if T == 1:
        return float(points[:, 0].max() - ref[0])
    if T == 2:
        return _hv2(points, ref)
    levels = np.unique(points[:, -1])[::-1]
    volume = 0.0
    for i, z in enumerate(levels):
        z_next = levels[i + 1] if i + 1 < len(levels) else ref[-1]
        slab = points[points[:, -1] >= z, :-1]
        volume += (z - z_next) * _hv_sweep(slab, ref[:-1])
    return volume


def _nondominated(points: np.ndarray) -> np.ndarray:
    keep = np.ones(len(points), dtype=bool)
    for i, p in enumerate(points):
        if not keep[i]:
            continue
        dominated = np.all(points <= p, axis=1) & np.any(points < p, axis=1)
        keep &= ~dominated
        dup = np.all(points == p, axis=1)
        dup[: i + 1] = False
        keep &= ~dup
    return points[keep]


def _as_points(perf, ref):
    perf = np.asarray(perf, dtype=float).reshape(-1, np.size(ref))
    ref = np.asarray(ref, dtype=float)
    if not (np.all(np.isfinite(ref)) and np.all(np.isfinite(perf))):
        raise ConfigError("hypervolume inputs must be finite")
    return perf, ref


def hv_monte_carlo(perf, ref, bound, samples: int = 1_000_000, seed: int = 0,
                   chunk: int = 100_000) -> float:
    """Uniform-sampling estimate of the dominated volume inside the box [ref, bound]."""
    perf, ref = _as_points(perf, ref)
    bound = np.asarray(bound, dtype=float)
    if not np.all(bound > ref):
        raise ConfigError("sampling box has zero volume: bound must exceed ref in every objective")
    if perf.size and np.any(perf > bound):
        raise ConfigError("bound must dominate every point")
    volume = float(np.prod(bound - ref))
    pts = perf[np.all(perf > ref, axis=1)]
    if pts.shape[0] == 0:
        return 0.0
    pts = _nondominated(pts)
    rng = np.random.default_rng(seed)
    hits = 0
    remaining = int(samples)
    while remaining > 0:
        n = min(chunk, remaining)
        u = ref + rng.uniform(size=(n, ref.size)) * (bound - ref)
        covered = np.zeros(n, dtype=bool)
        for p in pts:
            covered |= np.all(u <= p, axis=1)
        hits += int(covered.sum())
        remaining -= n
    return volume * hits / samples


def hypervolume(perf, ref, samples: int = 1_000_000, seed: int = 0, bound=None) -> float:
    """Dominated hypervolume of maximization-form points relative to ``ref``.

    Exact dimension sweep for up to four objectives; beyond that a Monte Carlo
    estimate inside [ref, bound] (bound defaults to the per-objective maximum).
    Points not strictly above ``ref`` in every objective contribute nothing.
    """
    perf, ref = _as_points(perf, ref)
    T = ref.size
    if T < 2:
        raise ConfigError("hypervolume needs at least two objectives")
    pts = perf[np.all(perf > ref, axis=1)]
    if T > EXACT_HV_MAX_OBJECTIVES:
        if pts.shape[0] == 0:
            return 0.0
        bound = pts.max(axis=0) if bound is None else np.asarray(bound, dtype=float)
        if not np.all(ref < bound):
            raise ConfigError("reference point must lie strictly below the upper bound")
        return hv_monte_carlo(pts, ref, bound, samples, seed)
    if pts.shape[0] == 0:
        return 0.0
    return float(_hv_sweep(_nondominated(pts), ref))


def hypervolume_method(T: int) -> str:
    return "exact" if T <= EXACT_HV_MAX_OBJECTIVES else "monte_carlo"


def novelty(gen: np.ndarray, data: np.ndarray) -> np.ndarray:
    """Distance from each generated row to its nearest dataset row."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise DataError("novelty needs a non-empty reference dataset")
    dist, _ = cKDTree(data).query(np.asarray(gen, dtype=float), k=1)
    return np.asarray(dist, dtype=float)


def diversity(points: np.ndarray) -> float:
    """Mean pairwise Euclidean distance."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] < 2:
        raise DataError("diversity needs at least two points")
    return float(np.mean(pdist(points)))


def silverman_bandwidth(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    q75, q25 = np.percentile(values, [75, 25])
    spread = min(np.std(values, ddof=1), (q75 - q25) / 1.34)
    return 0.9 * spread * values.size ** (-0.2)


def kde_density(values, grid) -> np.ndarray:
    values = np.asarray(values, dtype=float).reshape(-1)
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if values.size < 2:
        raise DataError("KDE needs at least two values")
    if np.any(np.diff(grid) < 0):
        raise DataError("KDE grid must be sorted")
    h = silverman_bandwidth(values)
    if not h > 0:
        raise DataError("degenerate data: zero KDE bandwidth")
    u = (grid[:, None] - values[None, :]) / h
    return np.exp(-0.5 * u * u).sum(axis=1) / (values.size * h * np.sqrt(2.0 * np.pi))


def kde_grid(values, n: int = 200, pad: float = 3.0) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    h = silverman_bandwidth(values)
    return np.linspace(values.min() - pad * h, values.max() + pad * h, n)


def maximization_form(perf: np.ndarray, directions) -> np.ndarray:
    sign = np.array([-1.0 if d == MINIMIZE else 1.0 for d in directions])
    return np.asarray(perf, dtype=float) * sign


@dataclass(frozen=True)
class MetricsConfig:
    n_eval: int = 250
    hv_samples: int = 1_000_000
    hv_seed: int = 0
    feasibility_threshold: float = 0.5
    kde_points: int = 200

    def __post_init__(self):
        if self.n_eval < 2:
            raise ConfigError("n_eval must be at least 2")


@dataclass(eq=False)
class MetricsReport:
    mean_tsr: float
    feasibility_rate: float
    mean_dtai: float
    mean_mtr: float
    hypervolume: float
    mean_novelty: float
    design_space_diversity: float
    performance_space_diversity: float
    per_design: dict
    provenance: dict = field(default_factory=dict)

    def scalars(self) -> dict:
        return {key: getattr(self, key) for key in METRIC_LABELS}

    def to_dict(self) -> dict:
        return {"metrics": self.scalars(), "provenance": self.provenance}

    def write(self, out_dir, extra: dict | None = None):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        doc = self.to_dict()
        if extra:
            doc.update(extra)
        with open(out_dir / "report.json", "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(out_dir / "per_design.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(PER_DESIGN_COLUMNS)
            pd = self.per_design
            for i in range(len(pd["tsr"])):
                writer.writerow([
                    i,
                    format_real(pd["tsr"][i]),
                    format_real(pd["mtr"][i]),
                    format_real(pd["dtai"][i]),
                    int(pd["feasible"][i]),
                    format_real(pd["novelty"][i]),
                ])

    @classmethod
    def read(cls, out_dir) -> "MetricsReport":
        out_dir = Path(out_dir)
        with open(out_dir / "report.json") as fh:
            doc = json.load(fh)
        cols = {name: [] for name in PER_DESIGN_COLUMNS[1:]}
        with open(out_dir / "per_design.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                for name in cols:
                    cols[name].append(float(row[name]))
        per_design = {name: np.asarray(v) for name, v in cols.items()}
        per_design["feasible"] = per_design["feasible"].astype(bool)
        return cls(**doc["metrics"], per_design=per_design, provenance=doc["provenance"])


def evaluate_all(designs: np.ndarray, data: Dataset, targets: TargetSpec, normalizer: Normalizer,
                 oracle=None, surrogates=None, cfg: MetricsConfig | None = None) -> MetricsReport:
    """Score a set of raw-unit designs against the dataset.

    Performance and feasibility come from ``oracle`` when given (a callable
    mapping raw designs to (performance, feasible)), else from the surrogates.
    Hypervolume is taken over the feasible designs, with the reference at the
    per-objective minimum over dataset and generated performance.
    """
    cfg = cfg or MetricsConfig()
    designs = np.asarray(designs, dtype=float)
    if designs.ndim != 2 or designs.shape[1] != data.schema.design_width:
        raise DomainError(f"designs must be m x {data.schema.design_width}, got {designs.shape}")
    xn = normalizer.transform_designs(designs)
    if oracle is not None:
        perf, feasible = oracle(designs)
        perf = np.asarray(perf, dtype=float)
        feasible = np.asarray(feasible, dtype=bool)
        perf_source, feas_source = "oracle", "exact"
    elif surrogates is not None:
        perf, _ = positive_performance(surrogates.predict_performance(xn), targets)
        feasible = surrogates.predict_feasibility(xn) >= cfg.feasibility_threshold
        perf_source, feas_source = "estimated", "estimated"
    else:
        raise ConfigError("evaluation needs an oracle or trained surrogates")

    tsr, mtr, dtai = target_metrics(perf, targets)
    nov = novelty(xn, normalizer.transform_designs(data.designs))

    directions = data.schema.directions
    gen_max = maximization_form(perf, directions)
    data_max = maximization_form(data.performances, directions)
    ref = np.minimum(gen_max.min(axis=0), data_max.min(axis=0))
    T = targets.T
    hv = hypervolume(gen_max[feasible], ref, cfg.hv_samples, cfg.hv_seed) if T >= 2 else float("nan")

    provenance = {
        "performance_source": perf_source,
        "feasibility_source": feas_source,
        "hv_method": hypervolume_method(T),
        "hv_reference": [float(v) for v in ref],
        "hv_points": "feasible designs",
        "n_designs": int(designs.shape[0]),
    }
    if hypervolume_method(T) == "monte_carlo":
        provenance.update(hv_samples=cfg.hv_samples, hv_seed=cfg.hv_seed)
    return MetricsReport(
        mean_tsr=float(tsr.mean()),
        feasibility_rate=float(feasible.mean()),
        mean_dtai=float(dtai.mean()),
        mean_mtr=float(mtr.mean()),
        hypervolume=float(hv),
        mean_novelty=float(nov.mean()),
        design_space_diversity=diversity(xn),
        performance_space_diversity=diversity(normalizer.transform_performance(perf)),
        per_design={"tsr": tsr, "mtr": mtr, "dtai": dtai, "feasible": feasible, "novelty": nov},
        provenance=provenance,
    )


def write_kde(path, values, n_points: int = 200, comment: str | None = None):
    grid = kde_grid(values, n_points)
    density = kde_density(values, grid)
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["grid_value", "density"])
        for g, d in zip(grid, density):
            writer.writerow([format_real(g), format_real(d)])
