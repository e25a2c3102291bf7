"""Design Target Achievement Index (DTAI) and its gradients.

Per-objective achievement is linear below the target and saturates
exponentially above it::

    s(r) = alpha * (r - 1)                             r <= 1
    s(r) = alpha / beta * (1 - exp(beta * (1 - r)))    r >  1

Summed scores are rescaled into [0, 1) using the bounds
``s_min = -sum(alpha)`` and ``s_max = sum(alpha / beta)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import TargetSpec
from .errors import DomainError

_BELOW_ONE = np.nextafter(1.0, 0.0)


def _check_positive(name, value):
    value = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(value) & (value > 0)):
        raise DomainError(f"{name} must be finite and strictly positive")
    return value


def achievement_score(r, alpha, beta):
    """Per-objective achievement score; accepts scalars or broadcastable arrays."""
    r = _check_positive("r", r)
    alpha = _check_positive("alpha", alpha)
    beta = _check_positive("beta", beta)
    over = r > 1.0
    # expm1 keeps precision for r just above 1
    upper = -(alpha / beta) * np.expm1(beta * (1.0 - np.where(over, r, 1.0)))
    out = np.where(over, upper, alpha * (r - 1.0))
    return float(out) if out.ndim == 0 else out


def achievement_slope(r, alpha, beta):
    """d s / d r; equals alpha on both sides of r = 1."""
    r = np.asarray(r, dtype=float)
    return np.where(r > 1.0, alpha * np.exp(beta * (1.0 - np.maximum(r, 1.0))), alpha * np.ones_like(r))


def score_bounds(alpha, beta) -> tuple[float, float]:
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    return -float(alpha.sum()), float((alpha / beta).sum())


@dataclass(frozen=True, eq=False)
class AchievementScores:
    per_objective: np.ndarray
    dtai: np.ndarray
    grad_wrt_ratio: np.ndarray


def dtai_score(ratios: np.ndarray, targets: TargetSpec) -> AchievementScores:
    ratios = np.asarray(ratios, dtype=float)
    if ratios.ndim != 2 or ratios.shape[1] != targets.T:
        raise DomainError(f"ratios must be n x {targets.T}, got {ratios.shape}")
    s = achievement_score(ratios, targets.alpha, targets.beta)
    s = np.asarray(s).reshape(ratios.shape)
    s_min, s_max = score_bounds(targets.alpha, targets.beta)
    span = s_max - s_min
    dtai = (s.sum(axis=1) - s_min) / span
    # true value is < 1; saturation above the target can round up to exactly 1
    dtai = np.clip(dtai, 0.0, _BELOW_ONE)
    grad = achievement_slope(ratios, targets.alpha, targets.beta) / span
    return AchievementScores(s, dtai, grad)


def ratio_derivative(perf: np.ndarray, targets: TargetSpec) -> np.ndarray:
    """d r / d p: 1/t when maximizing, -t/p**2 when minimizing."""
    perf = np.asarray(perf, dtype=float)
    return np.where(targets.minimize_mask, -targets.t / perf**2, 1.0 / targets.t)


def dtai_grad_wrt_performance(
    scores: AchievementScores, ratios: np.ndarray, targets: TargetSpec, perf: np.ndarray
) -> np.ndarray:
    """Chain rule from d DTAI / d r to d DTAI / d p, elementwise per (design, objective)."""
    perf = np.asarray(perf, dtype=float)
    if perf.shape != scores.grad_wrt_ratio.shape or np.shape(ratios) != perf.shape:
        raise DomainError("scores, ratios and performance must come from the same batch")
    if not np.all(perf > 0):
        raise DomainError("performance must be strictly positive")
    return scores.grad_wrt_ratio * ratio_derivative(perf, targets)
