"""Adversarial training with the quality-diversity auxiliary loss.

The generator minimizes the non-saturating GAN loss plus ``gamma1`` times the
DPP loss of its batch, where each design's quality is its predicted DTAI
(or a random objective weighting, for the -DTAI ablation) multiplied by the
classifier's feasibility likelihood (dropped for the -CLF ablation).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    Dataset,
    Normalizer,
    Schema,
    TargetSpec,
    format_real,
    positive_performance,
    target_ratios,
)
from .dpp import KernelConfig, dpp_loss, dpp_loss_backward, quality_weighted_kernel, similarity_matrix
from .dtai import dtai_grad_wrt_performance, dtai_score
from .errors import ContractError, DivergenceError, ParameterError
from .nn import (
    AdamState,
    NetParams,
    NetSpec,
    SoftmaxGroups,
    Surrogates,
    adam_step,
    init_params,
    net_backward,
    net_forward,
    sigmoid,
    softplus,
)

VARIANTS = ("proposed", "no_dtai", "no_clf", "no_dtai_no_clf", "vanilla")
Q_MIN = 1e-6
Q_MAX = 1.0 - 1e-6
LOG_COLUMNS = ("step", "d_loss", "g_loss", "dpp_loss", "mean_q", "mean_dtai_hat")


def normalize_variant(name: str) -> str:
    variant = name.replace("-", "_")
    if variant not in VARIANTS:
        raise ParameterError(f"unknown variant {name!r}; expected one of {VARIANTS}")
    return variant


def uses_dtai(variant: str) -> bool:
    return variant in ("proposed", "no_clf", "vanilla")


def uses_classifier(variant: str) -> bool:
    return variant in ("proposed", "no_dtai", "vanilla")


@dataclass(frozen=True)
class GanConfig:
    latent_dim: int = 16
    gen_hidden: tuple[int, ...] = (64, 64)
    disc_hidden: tuple[int, ...] = (64, 64)
    batch_size: int = 32
    steps: int = 5000
    gen_lr: float = 1e-4
    disc_lr: float = 1e-4
    betas: tuple[float, float] = (0.5, 0.999)
    seed: int = 0
    gamma1: float = 0.5
    variant: str = "proposed"
    kernel: KernelConfig = field(default_factory=KernelConfig)
    temperature: float = 1.0
    log_every: int = 100

    def __post_init__(self):
        object.__setattr__(self, "variant", normalize_variant(self.variant))
        if not self.gamma1 >= 0:
            raise ParameterError("gamma1 must be non-negative")
        if self.batch_size < 2:
            raise ParameterError("batch_size must be at least 2")
        if self.steps < 0 or self.latent_dim < 1 or self.log_every < 1:
            raise ParameterError("steps, latent_dim and log_every must be valid counts")
        if not (self.gen_lr > 0 and self.disc_lr > 0):
            raise ParameterError("learning rates must be positive")

    @property
    def auxiliary_active(self) -> bool:
        return self.variant != "vanilla" and self.gamma1 > 0


@dataclass(frozen=True, eq=False)
class GeneratorModel:
    spec: NetSpec
    params: NetParams
    normalizer: Normalizer
    schema: Schema

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "layers": self.params.to_list(),
            "normalizer": self.normalizer.to_dict(),
            "schema": self.schema.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GeneratorModel":
        return cls(
            NetSpec.from_dict(doc["spec"]),
            NetParams.from_list(doc["layers"]),
            Normalizer.from_dict(doc["normalizer"]),
            Schema.from_dict(doc["schema"]),
        )


def generator_spec(schema: Schema, cfg: GanConfig) -> NetSpec:
    out = SoftmaxGroups(schema.categorical_groups, cfg.temperature)
    widths = (cfg.latent_dim, *cfg.gen_hidden, schema.design_width)
    return NetSpec(widths, ("relu",) * len(cfg.gen_hidden) + (out,))


def discriminator_spec(schema: Schema, cfg: GanConfig) -> NetSpec:
    return NetSpec.mlp(schema.design_width, cfg.disc_hidden, 1, "sigmoid")


def harden(x: np.ndarray, schema: Schema) -> np.ndarray:
    """Replace each relaxed categorical block with its argmax one-hot."""
    x = np.array(x, copy=True)
    for start, stop in schema.categorical_groups:
        block = np.zeros_like(x[:, start:stop])
        block[np.arange(x.shape[0]), np.argmax(x[:, start:stop], axis=1)] = 1.0
        x[:, start:stop] = block
    return x


def sample_generator(model: GeneratorModel, n: int, seed: int, hard: bool = True) -> np.ndarray:
    """Normalized designs from standard-normal latents drawn from ``seed``."""
    if n < 1:
        raise ParameterError("n must be at least 1")
    z = np.random.default_rng(seed).standard_normal((n, model.spec.widths[0]))
    x, _ = net_forward(model.params, model.spec, z)
    return harden(x, model.schema) if hard else x


def generate_designs(model: GeneratorModel, n: int, seed: int) -> np.ndarray:
    """Raw-unit designs with exact one-hot categoricals."""
    return model.normalizer.inverse_designs(sample_generator(model, n, seed, hard=True))


def compute_quality(x: np.ndarray, surrogates: Surrogates, targets: TargetSpec, variant: str,
                    weights: np.ndarray | None = None, return_dtai: bool = False):
    """Feasibility-weighted quality of normalized designs and its gradient.

    Returns (q, dq/dx), plus the predicted DTAI when ``return_dtai`` is set.
    ``weights`` (a point on the simplex) is required when the variant
    replaces DTAI by a random objective weighting.
    """
    variant = normalize_variant(variant)
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != surrogates.regressor_spec.widths[0]:
        raise ContractError("designs do not match the surrogate input width")
    if targets.T != surrogates.regressor_spec.widths[-1]:
        raise ContractError("targets do not match the surrogate output width")
    norm = surrogates.normalizer

    out, rcache = net_forward(surrogates.regressor, surrogates.regressor_spec, x)
    p_raw = norm.inverse_performance(out)
    p, inside = positive_performance(p_raw, targets)
    r = target_ratios(p, targets)
    scores = dtai_score(r, targets)
    if uses_dtai(variant):
        q_perf = scores.dtai
        dq_dp = dtai_grad_wrt_performance(scores, r, targets, p) * inside
    else:
        if weights is None:
            raise ContractError(f"variant {variant!r} needs simplex weights")
        weights = np.asarray(weights, dtype=float)
        span = norm.perf_max - norm.perf_min
        minimize = targets.minimize_mask
        p_tilde = np.where(minimize, norm.perf_max - p_raw, p_raw - norm.perf_min) / span
        q_perf = p_tilde @ weights
        dq_dp = np.where(minimize, -1.0, 1.0) * weights / span * np.ones_like(p_raw)
    # d q_perf / d (regressor output), through the de-normalization
    g_perf = dq_dp * norm.perf_std

    if uses_classifier(variant):
        fout, ccache = net_forward(surrogates.classifier, surrogates.classifier_spec, x)
        f = fout[:, 0]
    else:
        f = np.ones(x.shape[0])
        ccache = None

    q_raw = q_perf * f
    q = np.clip(q_raw, Q_MIN, Q_MAX)
    active = ((q_raw >= Q_MIN) & (q_raw <= Q_MAX)).astype(float)

    _, dx = net_backward(rcache, g_perf * (f * active)[:, None])
    if ccache is not None:
        _, dxf = net_backward(ccache, (q_perf * active)[:, None])
        dx = dx + dxf
    if return_dtai:
        return q, dx, scores.dtai
    return q, dx


@dataclass(eq=False)
class TrainState:
    gen: NetParams
    disc: NetParams
    gen_opt: AdamState
    disc_opt: AdamState
    latent_rng: np.random.Generator
    batch_rng: np.random.Generator
    weight_rng: np.random.Generator
    step: int = 0


def init_state(schema: Schema, cfg: GanConfig) -> TrainState:
    seeds = np.random.SeedSequence(cfg.seed).spawn(5)
    gen = init_params(generator_spec(schema, cfg), np.random.default_rng(seeds[0]))
    disc = init_params(discriminator_spec(schema, cfg), np.random.default_rng(seeds[1]))
    return TrainState(
        gen=gen,
        disc=disc,
        gen_opt=AdamState.zeros_like(gen),
        disc_opt=AdamState.zeros_like(disc),
        latent_rng=np.random.default_rng(seeds[2]),
        batch_rng=np.random.default_rng(seeds[3]),
        weight_rng=np.random.default_rng(seeds[4]),
    )


def auxiliary_terms(x, surrogates, targets, cfg: GanConfig, weights=None):
    """DPP loss of a generated batch and its gradient with respect to the batch."""
    q, dqdx, dtai_hat = compute_quality(x, surrogates, targets, cfg.variant, weights, return_dtai=True)
    S = similarity_matrix(x, cfg.kernel)
    L = quality_weighted_kernel(S, q, cfg.kernel)
    loss, grad_L = dpp_loss(L, cfg.kernel)
    dx, dq = dpp_loss_backward(x, q, S, L, cfg.kernel, grad_L=grad_L)
    return loss, dx + dq[:, None] * dqdx, q, dtai_hat


def train_step(state: TrainState, real: np.ndarray, cfg: GanConfig, schema: Schema,
               surrogates: Surrogates, targets: TargetSpec):
    """One discriminator update followed by one generator update.

    Returns (new state, diagnostics dict). The auxiliary loss is evaluated for
    diagnostics on every variant but only contributes gradient when active.
    """
    gspec = generator_spec(schema, cfg)
    dspec = discriminator_spec(schema, cfg)
    B = real.shape[0]

    # discriminator: ascend log D(real) + log(1 - D(fake))
    z = state.latent_rng.standard_normal((B, cfg.latent_dim))
    fake, _ = net_forward(state.gen, gspec, z)
    both = np.vstack([real, fake])
    _, dcache = net_forward(state.disc, dspec, both)
    a = dcache.logits[:, 0]
    d_loss = float(np.mean(softplus(-a[:B])) + np.mean(softplus(a[B:])))
    prob = sigmoid(a)
    g_logit = np.concatenate([(prob[:B] - 1.0) / B, prob[B:] / B])[:, None]
    dgrads, _ = net_backward(dcache, g_logit, wrt="logits")
    disc, disc_opt = adam_step(state.disc, dgrads, state.disc_opt, cfg.disc_lr, cfg.betas)

    # generator: descend -log D(G(z)) + gamma1 * dpp_loss
    z = state.latent_rng.standard_normal((B, cfg.latent_dim))
    x, gcache = net_forward(state.gen, gspec, z)
    _, dcache = net_forward(disc, dspec, x)
    a = dcache.logits[:, 0]
    g_loss = float(np.mean(softplus(-a)))
    _, dx = net_backward(dcache, ((sigmoid(a) - 1.0) / B)[:, None], wrt="logits")

    weights = None
    if not uses_dtai(cfg.variant):
        weights = state.weight_rng.dirichlet(np.ones(targets.T))
    aux_loss, aux_dx, q, dtai_hat = auxiliary_terms(x, surrogates, targets, cfg, weights)
    if cfg.auxiliary_active:
        dx = dx + cfg.gamma1 * aux_dx
    ggrads, _ = net_backward(gcache, dx)
    gen, gen_opt = adam_step(state.gen, ggrads, state.gen_opt, cfg.gen_lr, cfg.betas)

    step = state.step
    for name, value in (("discriminator", d_loss), ("generator", g_loss), ("dpp", aux_loss)):
        if not np.isfinite(value):
            raise DivergenceError(f"non-finite {name} loss", step=step)
    new_state = replace(state, gen=gen, disc=disc, gen_opt=gen_opt, disc_opt=disc_opt, step=step + 1)
    diagnostics = {
        "step": step + 1,
        "d_loss": d_loss,
        "g_loss": g_loss,
        "dpp_loss": aux_loss,
        "mean_q": float(np.mean(q)),
        "mean_dtai_hat": float(np.mean(dtai_hat)),
    }
    return new_state, diagnostics


def train(data: Dataset, surrogates: Surrogates, targets: TargetSpec, cfg: GanConfig):
    """Run ``cfg.steps`` alternating updates on seeded minibatches of all dataset rows.

    Returns (GeneratorModel, log rows); a log row is kept every ``cfg.log_every`` steps.
    """
    schema = data.schema
    norm = surrogates.normalizer
    real_all = norm.transform_designs(data.designs)
    batch = min(cfg.batch_size, real_all.shape[0])
    state = init_state(schema, cfg)
    log = []
    for _ in range(cfg.steps):
        idx = state.batch_rng.choice(real_all.shape[0], size=batch, replace=False)
        state, diag = train_step(state, real_all[idx], cfg, schema, surrogates, targets)
        if diag["step"] % cfg.log_every == 0:
            log.append(diag)
    model = GeneratorModel(generator_spec(schema, cfg), state.gen, norm, schema)
    return model, log


def write_log(path, log: list[dict], comment: str | None = None):
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for row in log:
            writer.writerow([row["step"]] + [format_real(row[c]) for c in LOG_COLUMNS[1:]])
