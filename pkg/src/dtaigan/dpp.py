"""Quality-weighted DPP diversity loss.

The batch similarity matrix ``S`` (squared-exponential kernel) is scaled by
per-design quality, ``L_ij = (q_i q_j)**gamma_q * S_ij``, and the loss is the
negative mean log-determinant ``-(1/B) log det(L + eps I)``. Spread-out,
high-quality batches have large determinants and therefore low loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import (
    ContractError,
    DomainError,
    FactorizationError,
    GradientSingularityError,
    ParameterError,
)

Q_FLOOR = 1e-6
Q_CEIL = 1.0 - 1e-6
JITTER_ESCALATIONS = 3


def default_sigma(dim: int) -> float:
    return 0.5 * np.sqrt(dim) * 0.3


@dataclass(frozen=True)
class KernelConfig:
    sigma: float | None = None  # None: default_sigma(D)
    gamma_q: float = 1.0
    jitter: float = 1e-6

    def __post_init__(self):
        if self.sigma is not None and not self.sigma > 0:
            raise ParameterError("sigma must be positive")
        if not self.gamma_q >= 0:
            raise ParameterError("gamma_q must be non-negative")
        if not self.jitter > 0:
            raise ParameterError("jitter must be positive")

    def lengthscale(self, dim: int) -> float:
        return default_sigma(dim) if self.sigma is None else self.sigma


@dataclass(frozen=True, eq=False)
class QualityKernel:
    S: np.ndarray
    q: np.ndarray
    L: np.ndarray


def similarity_matrix(x: np.ndarray, cfg: KernelConfig) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DomainError(f"need a batch of at least two rows, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError("batch contains non-finite entries")
    sigma = cfg.lengthscale(x.shape[1])
    diff = x[:, None, :] - x[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    return np.exp(-sq / (2.0 * sigma**2))


def _clamped(q: np.ndarray) -> np.ndarray:
    return np.clip(q, Q_FLOOR, Q_CEIL)


def _check_quality(q, size):
    q = np.asarray(q, dtype=float)
    if q.shape != (size,):
        raise DomainError(f"quality vector must have length {size}, got shape {q.shape}")
    if not np.all((q >= 0) & (q < 1)):
        raise DomainError("quality values must lie in [0, 1)")
    return q


def quality_weights(q: np.ndarray, gamma_q: float) -> np.ndarray:
    if gamma_q == 0:
        return np.ones_like(q)
    return _clamped(q) ** gamma_q


def quality_weighted_kernel(S: np.ndarray, q: np.ndarray, cfg: KernelConfig) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    q = _check_quality(q, S.shape[0])
    w = quality_weights(q, cfg.gamma_q)
    return w[:, None] * S * w[None, :]


def build_kernel(x: np.ndarray, q: np.ndarray, cfg: KernelConfig) -> QualityKernel:
    S = similarity_matrix(x, cfg)
    return QualityKernel(S, np.asarray(q, dtype=float), quality_weighted_kernel(S, q, cfg))


def _factor(L: np.ndarray, jitter: float):
    eye = np.eye(L.shape[0])
    for attempt in range(JITTER_ESCALATIONS + 1):
        eps = jitter * 10.0**attempt
        try:
            return cho_factor(L + eps * eye, lower=True, check_finite=True), eps
        except np.linalg.LinAlgError:
            continue
    raise FactorizationError(
        f"kernel is not positive definite even with jitter {jitter * 10.0**JITTER_ESCALATIONS:g}"
    )


def dpp_loss(L: np.ndarray, cfg: KernelConfig) -> tuple[float, np.ndarray]:
    """Returns (loss, d loss / d L)."""
    L = np.asarray(L, dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ContractError(f"kernel must be square, got shape {L.shape}")
    if not np.allclose(L, L.T, rtol=1e-12, atol=1e-14):
        raise ContractError("kernel must be symmetric")
    B = L.shape[0]
    (c, lower), _ = _factor(L, cfg.jitter)
    logdet = 2.0 * np.sum(np.log(np.diag(c)))
    inv = cho_solve((c, lower), np.eye(B))
    grad = -0.5 * (inv + inv.T) / B
    return float(-logdet / B), grad


def dpp_loss_backward(x, q, S, L, cfg: KernelConfig, grad_L: np.ndarray | None = None):
    """Gradients of the DPP loss with respect to the batch and the qualities.

    Quality enters through the clamp to [Q_FLOOR, Q_CEIL]; entries outside
    that band receive zero gradient. Returns (d loss / d x, d loss / d q).
    """
    x = np.asarray(x, dtype=float)
    S = np.asarray(S, dtype=float)
    B = x.shape[0]
    q = _check_quality(q, B)
    if S.shape != (B, B) or np.shape(L) != (B, B):
        raise ContractError("x, q, S and L must come from the same batch")
    gamma = cfg.gamma_q
    if 0 < gamma < 1 and np.any(q == 0):
        raise GradientSingularityError("quality exactly 0 with gamma_q < 1 has unbounded gradient")
    if grad_L is None:
        _, grad_L = dpp_loss(L, cfg)
    w = quality_weights(q, gamma)

    # L_ij = w_i w_j S_ij with G = dLoss/dL symmetric
    H = grad_L * np.outer(w, w)
    if gamma == 0:
        dq = np.zeros(B)
    else:
        dw = 2.0 * (grad_L * S) @ w
        qc = _clamped(q)
        inside = (q >= Q_FLOOR) & (q <= Q_CEIL)
        dq = dw * gamma * qc ** (gamma - 1.0) * inside

    sigma = cfg.lengthscale(x.shape[1])
    M = H * S
    dx = -(2.0 / sigma**2) * (M.sum(axis=1)[:, None] * x - M @ x)
    return dx, dq
