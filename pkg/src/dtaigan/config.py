"""Experiment configuration: strict JSON parsing, defaults, canonical digest."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field, replace
from pathlib import Path

from .benchmark import BenchmarkConfig, SurrogateConfig, TargetConfig
from .dpp import KernelConfig
from .errors import ConfigError, DtaiganError
from .gan import GanConfig
from .metrics import MetricsConfig


def _listify(value):
    if isinstance(value, (list, tuple)):
        return tuple(_listify(v) for v in value)
    return value


def from_mapping(cls, doc, path: str = "config", skip: tuple[str, ...] = ()):
    """Build dataclass ``cls`` from a JSON mapping, rejecting unknown keys."""
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)} - set(skip)
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {unknown}")
    kwargs = {}
    for key, value in doc.items():
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            kwargs[key] = from_mapping(hint, value, f"{path}.{key}")
        elif hint is float and isinstance(value, int) and not isinstance(value, bool):
            # 2 and 2.0 must hash to the same digest
            kwargs[key] = float(value)
        else:
            kwargs[key] = _listify(value)
    try:
        return cls(**kwargs)
    except DtaiganError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    schema: dict | None = None
    targets: TargetConfig = field(default_factory=TargetConfig)
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    gan: GanConfig = field(default_factory=GanConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)

    def __post_init__(self):
        # the kernel section is the single source for the generator's DPP kernel
        object.__setattr__(self, "gan", replace(self.gan, kernel=self.kernel))

    @classmethod
    def from_dict(cls, doc: dict | None) -> "ExperimentConfig":
        doc = dict(doc or {})
        allowed = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - allowed)
        if unknown:
            raise ConfigError(f"config: unknown key(s) {unknown}")
        schema = doc.get("schema")
        if schema is not None and not isinstance(schema, dict):
            raise ConfigError("config.schema: expected an object")
        return cls(
            schema=schema,
            targets=from_mapping(TargetConfig, doc.get("targets"), "config.targets"),
            surrogate=from_mapping(SurrogateConfig, doc.get("surrogate"), "config.surrogate"),
            kernel=from_mapping(KernelConfig, doc.get("kernel"), "config.kernel"),
            gan=from_mapping(GanConfig, doc.get("gan"), "config.gan", skip=("kernel",)),
            metrics=from_mapping(MetricsConfig, doc.get("metrics"), "config.metrics"),
            benchmark=from_mapping(BenchmarkConfig, doc.get("benchmark"), "config.benchmark"),
        )

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        del doc["gan"]["kernel"]
        return json.loads(json.dumps(doc))

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return ExperimentConfig.from_dict(doc)
