"""Target-aware, feasibility-weighted DPP-augmented GAN for tabular design generation.

Modules:
    core: schemas, datasets, normalization and performance targets.
    dtai: the Design Target Achievement Index and its gradients.
    nn: dense networks, Adam, and surrogate training.
    dpp: quality-weighted DPP diversity loss.
    gan: generator training and sampling.
    metrics: evaluation metrics and reports.
    benchmark: synthetic problem, baselines and the comparison harness.
    cli: command-line entry point.
"""

from .core import Dataset, Schema, TargetSpec, compute_targets, fit_normalizer, load_dataset, target_ratios
from .dtai import achievement_score, dtai_grad_wrt_performance, dtai_score
from .errors import DtaiganError, NumericalError, ValidationError

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DtaiganError",
    "NumericalError",
    "Schema",
    "TargetSpec",
    "ValidationError",
    "achievement_score",
    "compute_targets",
    "dtai_grad_wrt_performance",
    "dtai_score",
    "fit_normalizer",
    "load_dataset",
    "target_ratios",
]
