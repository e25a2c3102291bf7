"""Dataset schema, CSV ingestion, normalization, targets and target ratios."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    DegenerateColumnError,
    DomainError,
    ParameterError,
    ParseError,
    SchemaError,
)

MAXIMIZE = "maximize"
MINIMIZE = "minimize"
DIRECTIONS = (MAXIMIZE, MINIMIZE)


@dataclass(frozen=True)
class ObjectiveSpec:
    name: str
    direction: str = MAXIMIZE

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise SchemaError(
                f"objective {self.name!r}: direction must be one of {DIRECTIONS}, "
                f"got {self.direction!r}"
            )


@dataclass(frozen=True)
class ContinuousColumn:
    name: str
    bounds: tuple[float, float] | None = None


@dataclass(frozen=True)
class CategoricalColumn:
    name: str
    levels: tuple[str, ...]

    def __post_init__(self):
        if len(self.levels) < 2:
            raise SchemaError(f"categorical {self.name!r} needs at least two levels")
        if len(set(self.levels)) != len(self.levels):
            raise SchemaError(f"categorical {self.name!r} has repeated levels")


@dataclass(frozen=True)
class Schema:
    """Column roles of a design dataset.

    The encoded design vector lists continuous columns first (schema order),
    followed by one one-hot block per categorical column.
    """

    continuous: tuple[ContinuousColumn, ...]
    categorical: tuple[CategoricalColumn, ...]
    performance: tuple[ObjectiveSpec, ...]
    feasibility: str

    def __post_init__(self):
        if not self.performance:
            raise SchemaError("schema declares no performance columns")
        if not self.continuous and not self.categorical:
            raise SchemaError("schema declares no design columns")
        names = (
            [c.name for c in self.continuous]
            + [c.name for c in self.categorical]
            + [o.name for o in self.performance]
            + [self.feasibility]
        )
        seen = set()
        for name in names:
            if name in seen:
                raise SchemaError(f"column {name!r} is assigned more than one role")
            seen.add(name)

    @property
    def n_continuous(self) -> int:
        return len(self.continuous)

    @property
    def design_width(self) -> int:
        return self.n_continuous + sum(len(c.levels) for c in self.categorical)

    @property
    def n_objectives(self) -> int:
        return len(self.performance)

    @property
    def directions(self) -> tuple[str, ...]:
        return tuple(o.direction for o in self.performance)

    @property
    def categorical_groups(self) -> tuple[tuple[int, int], ...]:
        """(start, stop) extents of each one-hot block in the encoded vector."""
        groups = []
        start = self.n_continuous
        for col in self.categorical:
            groups.append((start, start + len(col.levels)))
            start += len(col.levels)
        return tuple(groups)

    @classmethod
    def from_dict(cls, doc: dict) -> "Schema":
        allowed = {"design_continuous", "design_categorical", "performance", "feasibility"}
        unknown = set(doc) - allowed
        if unknown:
            raise SchemaError(f"unknown schema keys: {sorted(unknown)}")
        if "feasibility" not in doc:
            raise SchemaError("schema must name a feasibility column")
        continuous = []
        for entry in doc.get("design_continuous", []):
            if isinstance(entry, str):
                continuous.append(ContinuousColumn(entry))
            else:
                bounds = entry.get("bounds")
                if bounds is not None:
                    lo, hi = (float(b) for b in bounds)
                    if not hi > lo:
                        raise SchemaError(f"column {entry['name']!r}: bounds must satisfy hi > lo")
                    bounds = (lo, hi)
                continuous.append(ContinuousColumn(entry["name"], bounds))
        categorical = [
            CategoricalColumn(name, tuple(str(level) for level in levels))
            for name, levels in doc.get("design_categorical", {}).items()
        ]
        performance = []
        for entry in doc.get("performance", []):
            if isinstance(entry, str):
                performance.append(ObjectiveSpec(entry))
            else:
                performance.append(ObjectiveSpec(entry["name"], entry.get("direction", MAXIMIZE)))
        return cls(tuple(continuous), tuple(categorical), tuple(performance), doc["feasibility"])

    def to_dict(self) -> dict:
        continuous = []
        for col in self.continuous:
            if col.bounds is None:
                continuous.append(col.name)
            else:
                continuous.append({"name": col.name, "bounds": list(col.bounds)})
        return {
            "design_continuous": continuous,
            "design_categorical": {c.name: list(c.levels) for c in self.categorical},
            "performance": [{"name": o.name, "direction": o.direction} for o in self.performance],
            "feasibility": self.feasibility,
        }


def load_schema(path: str | Path) -> Schema:
    with open(path) as fh:
        return Schema.from_dict(json.load(fh))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Encoded design rows with raw performance values and feasibility labels.

    ``designs`` holds continuous variables in raw units followed by one-hot
    categorical blocks.
    """

    schema: Schema
    designs: np.ndarray
    performances: np.ndarray
    feasible: np.ndarray

    def __post_init__(self):
        designs = _readonly(np.asarray(self.designs, dtype=float))
        perf = _readonly(np.asarray(self.performances, dtype=float))
        feasible = _readonly(np.asarray(self.feasible, dtype=bool))
        n = designs.shape[0]
        if designs.ndim != 2 or designs.shape[1] != self.schema.design_width:
            raise DataError(
                f"designs must be n x {self.schema.design_width}, got {designs.shape}"
            )
        if perf.shape != (n, self.schema.n_objectives):
            raise DataError(f"performances must be {n} x {self.schema.n_objectives}, got {perf.shape}")
        if feasible.shape != (n,):
            raise DataError(f"feasible must have length {n}")
        if n < 2:
            raise DataError("a dataset needs at least two rows")
        if not (np.all(np.isfinite(designs)) and np.all(np.isfinite(perf))):
            raise DataError("dataset contains non-finite entries")
        for start, stop in self.schema.categorical_groups:
            block = designs[:, start:stop]
            if not (np.all((block == 0) | (block == 1)) and np.all(block.sum(axis=1) == 1)):
                raise DataError(f"one-hot block [{start}, {stop}) is not exactly one-hot")
        bad = np.argwhere(perf <= 0)
        if bad.size:
            i, k = bad[0]
            raise DomainError(
                f"performance must be strictly positive: row {i}, "
                f"objective {self.schema.performance[k].name!r} = {perf[i, k]!r}"
            )
        object.__setattr__(self, "designs", designs)
        object.__setattr__(self, "performances", perf)
        object.__setattr__(self, "feasible", feasible)

    @property
    def n_rows(self) -> int:
        return self.designs.shape[0]

    @property
    def design_columns(self):
        return self.schema.continuous + self.schema.categorical

    @property
    def performance_columns(self) -> tuple[ObjectiveSpec, ...]:
        return self.schema.performance

    def subset(self, mask) -> "Dataset":
        return Dataset(self.schema, self.designs[mask], self.performances[mask], self.feasible[mask])


def _data_lines(fh):
    for line in fh:
        if not line.startswith("#"):
            yield line


def _parse_number(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"row {row}, column {column!r}: {text!r} is not a number") from None
    if not np.isfinite(value):
        raise ParseError(f"row {row}, column {column!r}: non-finite value {text!r}")
    return value


def encode_designs(schema: Schema, records: list[dict], start_row: int = 0) -> np.ndarray:
    """Encode decoded design records (column name -> cell text) into the design matrix."""
    out = np.zeros((len(records), schema.design_width))
    for i, rec in enumerate(records):
        row = start_row + i
        for j, col in enumerate(schema.continuous):
            out[i, j] = _parse_number(rec[col.name], row, col.name)
        for col, (start, _) in zip(schema.categorical, schema.categorical_groups):
            level = rec[col.name].strip()
            try:
                out[i, start + col.levels.index(level)] = 1.0
            except ValueError:
                raise ParseError(
                    f"row {row}, column {col.name!r}: unknown level {level!r}"
                ) from None
    return out


def _read_csv(path, required: list[str]) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(_data_lines(fh))
        header = reader.fieldnames or []
        if not header:
            raise SchemaError(f"{path}: missing header row")
        for name in required:
            if name not in header:
                raise SchemaError(f"{path}: missing column {name!r}")
        return list(reader)


def load_dataset(path: str | Path, schema: Schema) -> Dataset:
    """Read a dataset CSV; lines starting with ``#`` are comments."""
    required = (
        [c.name for c in schema.continuous]
        + [c.name for c in schema.categorical]
        + [o.name for o in schema.performance]
        + [schema.feasibility]
    )
    records = _read_csv(path, required)
    designs = encode_designs(schema, records)
    perf = np.zeros((len(records), schema.n_objectives))
    feasible = np.zeros(len(records), dtype=bool)
    for i, rec in enumerate(records):
        for k, obj in enumerate(schema.performance):
            perf[i, k] = _parse_number(rec[obj.name], i, obj.name)
        flag = _parse_number(rec[schema.feasibility], i, schema.feasibility)
        if flag not in (0.0, 1.0):
            raise ParseError(f"row {i}, column {schema.feasibility!r}: feasibility must be 0 or 1")
        feasible[i] = flag == 1.0
    return Dataset(schema, designs, perf, feasible)


def load_designs(path: str | Path, schema: Schema) -> np.ndarray:
    """Read a design-only CSV (decoded columns) into the raw encoded design matrix."""
    required = [c.name for c in schema.continuous] + [c.name for c in schema.categorical]
    return encode_designs(schema, _read_csv(path, required))


def format_real(value: float) -> str:
    return repr(float(value))


def decode_design_rows(schema: Schema, designs: np.ndarray) -> list[list[str]]:
    rows = []
    for x in designs:
        cells = [format_real(v) for v in x[: schema.n_continuous]]
        for col, (start, stop) in zip(schema.categorical, schema.categorical_groups):
            cells.append(col.levels[int(np.argmax(x[start:stop]))])
        rows.append(cells)
    return rows


def design_header(schema: Schema) -> list[str]:
    return [c.name for c in schema.continuous] + [c.name for c in schema.categorical]


def write_designs(path, schema: Schema, designs: np.ndarray, comment: str | None = None):
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(design_header(schema))
        writer.writerows(decode_design_rows(schema, designs))


def write_dataset(path, data: Dataset, comment: str | None = None):
    schema = data.schema
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            design_header(schema) + [o.name for o in schema.performance] + [schema.feasibility]
        )
        for cells, p, f in zip(
            decode_design_rows(schema, data.designs), data.performances, data.feasible
        ):
            writer.writerow(cells + [format_real(v) for v in p] + [str(int(f))])


@dataclass(frozen=True, eq=False)
class Normalizer:
    """Min-max scaling for continuous design variables, z-scores for performance.

    One-hot columns pass through unchanged. ``perf_min``/``perf_max`` are kept
    for the random-weighting quality of the ablation variants.
    """

    n_continuous: int
    design_min: np.ndarray
    design_max: np.ndarray
    perf_mean: np.ndarray
    perf_std: np.ndarray
    perf_min: np.ndarray
    perf_max: np.ndarray

    def transform_designs(self, x: np.ndarray) -> np.ndarray:
        x = np.array(x, dtype=float, copy=True)
        c = self.n_continuous
        x[:, :c] = (x[:, :c] - self.design_min) / (self.design_max - self.design_min)
        return x

    def inverse_designs(self, xn: np.ndarray) -> np.ndarray:
        x = np.array(xn, dtype=float, copy=True)
        c = self.n_continuous
        x[:, :c] = x[:, :c] * (self.design_max - self.design_min) + self.design_min
        return x

    def transform_performance(self, p: np.ndarray) -> np.ndarray:
        return (np.asarray(p, dtype=float) - self.perf_mean) / self.perf_std

    def inverse_performance(self, pn: np.ndarray) -> np.ndarray:
        return np.asarray(pn, dtype=float) * self.perf_std + self.perf_mean

    def to_dict(self) -> dict:
        return {
            "n_continuous": self.n_continuous,
            **{
                name: [float(v) for v in getattr(self, name)]
                for name in (
                    "design_min", "design_max", "perf_mean", "perf_std", "perf_min", "perf_max"
                )
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Normalizer":
        arrays = {
            name: _readonly(np.asarray(doc[name], dtype=float))
            for name in ("design_min", "design_max", "perf_mean", "perf_std", "perf_min", "perf_max")
        }
        return cls(n_continuous=int(doc["n_continuous"]), **arrays)


def fit_normalizer(data: Dataset) -> Normalizer:
    """Fit scaling statistics; declared column bounds take precedence over data extremes."""
    schema = data.schema
    c = schema.n_continuous
    lo = np.empty(c)
    hi = np.empty(c)
    for j, col in enumerate(schema.continuous):
        if col.bounds is not None:
            lo[j], hi[j] = col.bounds
        else:
            lo[j], hi[j] = data.designs[:, j].min(), data.designs[:, j].max()
        if not hi[j] > lo[j]:
            raise DegenerateColumnError(f"design column {col.name!r} is constant")
    mean = data.performances.mean(axis=0)
    std = data.performances.std(axis=0)
    for k, obj in enumerate(schema.performance):
        if not std[k] > 0:
            raise DegenerateColumnError(f"performance column {obj.name!r} is constant")
    return Normalizer(
        n_continuous=c,
        design_min=_readonly(lo),
        design_max=_readonly(hi),
        perf_mean=_readonly(mean),
        perf_std=_readonly(std),
        perf_min=_readonly(data.performances.min(axis=0)),
        perf_max=_readonly(data.performances.max(axis=0)),
    )


@dataclass(frozen=True, eq=False)
class TargetSpec:
    """Per-objective targets (raw units) with DTAI priority and decay factors."""

    t: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    directions: tuple[str, ...]

    def __post_init__(self):
        t = _readonly(np.asarray(self.t, dtype=float).reshape(-1))
        alpha = _readonly(np.asarray(self.alpha, dtype=float).reshape(-1))
        beta = _readonly(np.asarray(self.beta, dtype=float).reshape(-1))
        directions = tuple(self.directions)
        n = t.shape[0]
        if n < 1 or alpha.shape != (n,) or beta.shape != (n,) or len(directions) != n:
            raise ParameterError("t, alpha, beta and directions must all have length T >= 1")
        for d in directions:
            if d not in DIRECTIONS:
                raise ParameterError(f"unknown direction {d!r}")
        if not (np.all(np.isfinite(alpha)) and np.all(alpha > 0)):
            raise ParameterError(f"alpha must be positive, got {alpha.tolist()}")
        if not (np.all(np.isfinite(beta)) and np.all(beta > 0)):
            raise ParameterError(f"beta must be positive, got {beta.tolist()}")
        if not (np.all(np.isfinite(t)) and np.all(t > 0)):
            raise DomainError(f"targets must be finite and positive, got {t.tolist()}")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "directions", directions)

    @property
    def T(self) -> int:
        return self.t.shape[0]

    @property
    def minimize_mask(self) -> np.ndarray:
        return np.array([d == MINIMIZE for d in self.directions])

    def to_dict(self) -> dict:
        return {
            "t": self.t.tolist(),
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "directions": list(self.directions),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TargetSpec":
        return cls(doc["t"], doc["alpha"], doc["beta"], tuple(doc["directions"]))


def compute_targets(data: Dataset, percentile: float = 75.0, alpha=None, beta=None) -> TargetSpec:
    """Targets at ``percentile`` of the feasible rows, taken in the achievement direction.

    For a minimized objective the 75th percentile of achievement is the 25th
    percentile of raw values. Quantiles use linear interpolation at rank
    (n - 1) * q.
    """
    if not 0 < percentile < 100:
        raise ParameterError(f"percentile must be in (0, 100), got {percentile}")
    T = data.schema.n_objectives
    alpha = np.ones(T) if alpha is None else np.asarray(alpha, dtype=float)
    beta = np.ones(T) if beta is None else np.asarray(beta, dtype=float)
    if alpha.shape != (T,) or beta.shape != (T,):
        raise ParameterError(f"alpha and beta must have length {T}")
    if np.any(alpha <= 0) or np.any(beta <= 0):
        raise ParameterError("alpha and beta must be strictly positive")
    feasible = data.performances[data.feasible]
    if feasible.shape[0] == 0:
        raise DataError("no feasible rows to compute targets from")
    q = percentile / 100.0
    t = np.empty(T)
    for k, direction in enumerate(data.schema.directions):
        level = q if direction == MAXIMIZE else 1.0 - q
        t[k] = np.quantile(feasible[:, k], level, method="linear")
    return TargetSpec(t, alpha, beta, data.schema.directions)


def target_ratios(perf: np.ndarray, targets: TargetSpec) -> np.ndarray:
    """Achievement ratios oriented so that r >= 1 means the target is met.

    Maximized objectives use p / t, minimized objectives t / p.
    """
    perf = np.asarray(perf, dtype=float)
    if perf.ndim != 2 or perf.shape[1] != targets.T:
        raise DomainError(f"performance must be n x {targets.T}, got {perf.shape}")
    bad = np.argwhere(~(np.isfinite(perf) & (perf > 0)))
    if bad.size:
        i, k = bad[0]
        raise DomainError(f"non-positive performance at row {i}, objective {k}: {perf[i, k]!r}")
    return np.where(targets.minimize_mask, targets.t / perf, perf / targets.t)


PERFORMANCE_FLOOR = 1e-6


def positive_performance(perf: np.ndarray, targets: TargetSpec):
    """Clamp surrogate estimates to ``PERFORMANCE_FLOOR * t`` so ratios stay defined.

    Returns (clamped performance, mask of entries left unchanged).
    """
    floor = PERFORMANCE_FLOOR * targets.t
    perf = np.asarray(perf, dtype=float)
    inside = perf > floor
    return np.where(inside, perf, floor), inside
