"""Dense feedforward networks with hand-written backprop, Adam, and surrogate training."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, Normalizer, _readonly
from .errors import ContractError, DataError, DimensionError, DivergenceError, ParameterError

ACTIVATIONS = ("relu", "sigmoid", "identity")
LOSSES = ("mse", "bce")
_TINY = np.finfo(float).tiny
_BELOW_ONE = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class SoftmaxGroups:
    """Output activation for mixed design vectors.

    Each (start, stop) extent is a softmax block at the given temperature;
    columns outside every block are squashed with a sigmoid.
    """

    groups: tuple[tuple[int, int], ...] = ()
    temperature: float = 1.0

    def to_dict(self) -> dict:
        return {"softmax_groups": [list(g) for g in self.groups], "temperature": self.temperature}


@dataclass(frozen=True)
class NetSpec:
    widths: tuple[int, ...]
    activations: tuple  # str or SoftmaxGroups per layer

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(widths) < 2 or min(widths) < 1:
            raise ParameterError(f"invalid layer widths {widths}")
        if len(self.activations) != len(widths) - 1:
            raise ParameterError("need exactly one activation per layer")
        for layer, act in enumerate(self.activations):
            if isinstance(act, SoftmaxGroups):
                if layer != len(widths) - 2:
                    raise ParameterError("softmax groups are only supported on the output layer")
                covered = np.zeros(widths[-1], dtype=int)
                for start, stop in act.groups:
                    if not 0 <= start < stop <= widths[-1] or stop - start < 2:
                        raise ParameterError(f"bad softmax group ({start}, {stop})")
                    covered[start:stop] += 1
                if covered.max(initial=0) > 1:
                    raise ParameterError("softmax groups overlap")
                if not act.temperature > 0:
                    raise ParameterError("softmax temperature must be positive")
            elif act not in ACTIVATIONS:
                raise ParameterError(f"unknown activation {act!r}")

    @classmethod
    def mlp(cls, n_in: int, hidden, n_out: int, output="identity") -> "NetSpec":
        widths = (n_in, *hidden, n_out)
        return cls(widths, ("relu",) * len(hidden) + (output,))

    def to_dict(self) -> dict:
        return {
            "widths": list(self.widths),
            "activations": [a.to_dict() if isinstance(a, SoftmaxGroups) else a for a in self.activations],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NetSpec":
        acts = []
        for a in doc["activations"]:
            if isinstance(a, dict):
                acts.append(
                    SoftmaxGroups(tuple(tuple(g) for g in a["softmax_groups"]), float(a["temperature"]))
                )
            else:
                acts.append(a)
        return cls(tuple(doc["widths"]), tuple(acts))


@dataclass(frozen=True, eq=False)
class NetParams:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def arrays(self) -> list[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    @classmethod
    def from_arrays(cls, arrays) -> "NetParams":
        arrays = list(arrays)
        return cls(tuple(arrays[0::2]), tuple(arrays[1::2]))

    def frozen(self) -> "NetParams":
        return NetParams.from_arrays(_readonly(a) for a in self.arrays())

    def to_list(self) -> list[dict]:
        return [{"w": w.tolist(), "b": b.tolist()} for w, b in zip(self.weights, self.biases)]

    @classmethod
    def from_list(cls, layers: list[dict]) -> "NetParams":
        return cls(
            tuple(np.asarray(layer["w"], dtype=float) for layer in layers),
            tuple(np.asarray(layer["b"], dtype=float) for layer in layers),
        )


def check_params(params: NetParams, spec: NetSpec):
    if len(params.weights) != len(spec.widths) - 1:
        raise DimensionError("parameter layer count does not match the network spec")
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        if w.shape != (spec.widths[i], spec.widths[i + 1]) or b.shape != (spec.widths[i + 1],):
            raise DimensionError(f"layer {i} shapes {w.shape}, {b.shape} do not match the network spec")


def init_params(spec: NetSpec, rng: np.random.Generator) -> NetParams:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetParams(tuple(weights), tuple(biases))


def sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    # keep probabilities strictly inside (0, 1) once exp saturates
    return np.clip(out, _TINY, _BELOW_ONE)


def softplus(z):
    return np.logaddexp(0.0, z)


def _activate(act, z):
    if act == "identity":
        return z
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "sigmoid":
        return sigmoid(z)
    out = sigmoid(z)
    for start, stop in act.groups:
        block = z[:, start:stop] / act.temperature
        block = np.exp(block - block.max(axis=1, keepdims=True))
        out[:, start:stop] = block / block.sum(axis=1, keepdims=True)
    return out


def _activation_backward(act, z, a, g):
    if act == "identity":
        return g
    if act == "relu":
        return g * (z > 0)
    if act == "sigmoid":
        return g * a * (1.0 - a)
    out = g * a * (1.0 - a)
    for start, stop in act.groups:
        s = a[:, start:stop]
        gs = g[:, start:stop]
        out[:, start:stop] = s * (gs - (gs * s).sum(axis=1, keepdims=True)) / act.temperature
    return out


@dataclass(eq=False)
class ForwardCache:
    spec: NetSpec
    params: NetParams
    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    post: list = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.post[-1]

    @property
    def logits(self) -> np.ndarray:
        return self.pre[-1]


def net_forward(params: NetParams, spec: NetSpec, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != spec.widths[0]:
        raise DimensionError(f"expected input of width {spec.widths[0]}, got shape {x.shape}")
    check_params(params, spec)
    cache = ForwardCache(spec, params)
    h = x
    for w, b, act in zip(params.weights, params.biases, spec.activations):
        cache.inputs.append(h)
        z = h @ w + b
        h = _activate(act, z)
        cache.pre.append(z)
        cache.post.append(h)
    return h, cache


def net_backward(cache: ForwardCache, upstream: np.ndarray, wrt: str = "output"):
    """Backpropagate ``upstream`` (d loss / d output) through a cached forward pass.

    With ``wrt="logits"`` the upstream gradient is taken to be with respect to
    the final pre-activation, which is how the cross-entropy losses are fed in.

    Returns (parameter gradients, input gradient).
    """
    if not cache.pre:
        raise ContractError("cache is empty; run net_forward first")
    if wrt not in ("output", "logits"):
        raise ContractError(f"wrt must be 'output' or 'logits', got {wrt!r}")
    g = np.asarray(upstream, dtype=float)
    if g.shape != cache.output.shape:
        raise ContractError(f"upstream gradient shape {g.shape} != output shape {cache.output.shape}")
    spec, params = cache.spec, cache.params
    n_layers = len(spec.activations)
    gw = [None] * n_layers
    gb = [None] * n_layers
    for i in reversed(range(n_layers)):
        if not (i == n_layers - 1 and wrt == "logits"):
            g = _activation_backward(spec.activations[i], cache.pre[i], cache.post[i], g)
        gw[i] = cache.inputs[i].T @ g
        gb[i] = g.sum(axis=0)
        g = g @ params.weights[i].T
    return NetParams(tuple(gw), tuple(gb)), g


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params: NetParams) -> "AdamState":
        return cls([np.zeros_like(a) for a in params.arrays()], [np.zeros_like(a) for a in params.arrays()])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    batch_size: int = 64
    steps: int | None = None  # None: 200 epochs over the training split
    seed: int = 0
    loss: str = "mse"
    hidden: tuple[int, ...] = (64, 64)
    epochs: int = 200
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be positive")
        if not all(0 <= b < 1 for b in self.betas):
            raise ParameterError("moment decays must lie in [0, 1)")
        if self.batch_size < 2:
            raise ParameterError("batch_size must be at least 2")
        if self.loss not in LOSSES:
            raise ParameterError(f"loss must be one of {LOSSES}")
        if self.steps is not None and self.steps < 0:
            raise ParameterError("steps must be non-negative")


def adam_step(params: NetParams, grads: NetParams, state: AdamState, lr: float, betas=(0.9, 0.999), eps=1e-8):
    """One bias-corrected Adam update. Returns new (params, state); inputs are not mutated."""
    b1, b2 = betas
    garrs = grads.arrays()
    for g in garrs:
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient", step=state.t + 1)
    t = state.t + 1
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.arrays(), garrs, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return NetParams.from_arrays(new_p), AdamState(new_m, new_v, t)


def loss_and_grad(loss: str, cache: ForwardCache, y: np.ndarray):
    """Mean loss over the batch and its gradient.

    For ``bce`` the gradient is with respect to the logits (see ``net_backward``).
    """
    out = cache.output
    n = out.shape[0]
    if loss == "mse":
        diff = out - y
        return float(np.mean(diff * diff)), 2.0 * diff / diff.size, "output"
    if cache.spec.activations[-1] != "sigmoid":
        raise ContractError("bce loss requires a sigmoid output layer")
    z = cache.logits
    value = np.mean(y * softplus(-z) + (1.0 - y) * softplus(z))
    return float(value), (out - y) / (n * out.shape[1]), "logits"


def train_net(spec: NetSpec, params: NetParams, x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
              rng: np.random.Generator) -> NetParams:
    n = x.shape[0]
    batch = min(cfg.batch_size, n)
    steps = cfg.steps if cfg.steps is not None else cfg.epochs * int(np.ceil(n / batch))
    state = AdamState.zeros_like(params)
    order = rng.permutation(n)
    cursor = 0
    for step in range(steps):
        if cursor + batch > n:
            order = rng.permutation(n)
            cursor = 0
        idx = order[cursor:cursor + batch]
        cursor += batch
        _, cache = net_forward(params, spec, x[idx])
        value, g, wrt = loss_and_grad(cfg.loss, cache, y[idx])
        if not np.isfinite(value):
            raise DivergenceError(f"non-finite {cfg.loss} loss", step=step)
        grads, _ = net_backward(cache, g, wrt=wrt)
        params, state = adam_step(params, grads, state, cfg.learning_rate, cfg.betas, cfg.eps)
    return params


def _split(n: int, seed: int, holdout: float = 0.2):
    perm = np.random.default_rng(seed).permutation(n)
    n_hold = int(round(holdout * n))
    return perm[n_hold:], perm[:n_hold]


@dataclass(frozen=True, eq=False)
class Surrogates:
    """Frozen performance regressor (normalized units) and feasibility classifier."""

    regressor_spec: NetSpec
    regressor: NetParams
    classifier_spec: NetSpec
    classifier: NetParams
    normalizer: Normalizer
    metrics: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "regressor", self.regressor.frozen())
        object.__setattr__(self, "classifier", self.classifier.frozen())

    def predict_performance(self, xn: np.ndarray) -> np.ndarray:
        """Raw-unit performance estimates for normalized designs."""
        out, _ = net_forward(self.regressor, self.regressor_spec, xn)
        return self.normalizer.inverse_performance(out)

    def predict_feasibility(self, xn: np.ndarray) -> np.ndarray:
        out, _ = net_forward(self.classifier, self.classifier_spec, xn)
        return out[:, 0]

    def to_dict(self) -> dict:
        return {
            "regressor": {"spec": self.regressor_spec.to_dict(), "layers": self.regressor.to_list()},
            "classifier": {"spec": self.classifier_spec.to_dict(), "layers": self.classifier.to_list()},
            "normalizer": self.normalizer.to_dict(),
            "metrics": dict(self.metrics),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Surrogates":
        return cls(
            NetSpec.from_dict(doc["regressor"]["spec"]),
            NetParams.from_list(doc["regressor"]["layers"]),
            NetSpec.from_dict(doc["classifier"]["spec"]),
            NetParams.from_list(doc["classifier"]["layers"]),
            Normalizer.from_dict(doc["normalizer"]),
            dict(doc.get("metrics", {})),
        )


def train_surrogates(data: Dataset, norm: Normalizer, reg_cfg: TrainConfig | None = None,
                     clf_cfg: TrainConfig | None = None) -> Surrogates:
    """Fit the performance regressor on feasible rows and the classifier on all rows.

    Each network holds out 20% of its rows (seeded permutation) and reports
    held-out RMSE (normalized units) or accuracy in ``Surrogates.metrics``.
    """
    reg_cfg = reg_cfg or TrainConfig(loss="mse")
    clf_cfg = clf_cfg or TrainConfig(loss="bce", seed=reg_cfg.seed + 1)
    if data.feasible.all() or not data.feasible.any():
        raise DataError("feasibility labels must contain both classes")
    x = norm.transform_designs(data.designs)
    d, T = data.schema.design_width, data.schema.n_objectives

    xf = x[data.feasible]
    yf = norm.transform_performance(data.performances[data.feasible])
    train, hold = _split(xf.shape[0], reg_cfg.seed)
    rng = np.random.default_rng(reg_cfg.seed)
    reg_spec = NetSpec.mlp(d, reg_cfg.hidden, T, "identity")
    reg = train_net(reg_spec, init_params(reg_spec, rng), xf[train], yf[train], reg_cfg, rng)

    labels = data.feasible.astype(float)[:, None]
    ctrain, chold = _split(x.shape[0], clf_cfg.seed)
    crng = np.random.default_rng(clf_cfg.seed)
    clf_spec = NetSpec.mlp(d, clf_cfg.hidden, 1, "sigmoid")
    clf = train_net(clf_spec, init_params(clf_spec, crng), x[ctrain], labels[ctrain], clf_cfg, crng)

    metrics = {}
    if hold.size:
        pred, _ = net_forward(reg, reg_spec, xf[hold])
        metrics["regressor_rmse"] = float(np.sqrt(np.mean((pred - yf[hold]) ** 2)))
    if chold.size:
        prob, _ = net_forward(clf, clf_spec, x[chold])
        metrics["classifier_accuracy"] = float(np.mean((prob >= 0.5) == (labels[chold] == 1)))
    return Surrogates(reg_spec, reg, clf_spec, clf, norm, metrics)


def max_relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale, initial=0.0))


def norm_relative_error(analytic, numeric, floor: float = 1e-12) -> float:
    """Whole-array relative error; robust where tiny entries are dominated by roundoff."""
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / scale)


def central_difference(f, x: np.ndarray, h: float) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` by central differences (x is restored in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        grad[idx] = (up - down) / (2.0 * h)
    return grad


def kink_distance(params: NetParams, spec: NetSpec, x: np.ndarray) -> float:
    """Smallest |pre-activation| over all rectifier units (inf without rectifiers)."""
    _, cache = net_forward(params, spec, x)
    near = [np.min(np.abs(z)) for z, a in zip(cache.pre, spec.activations) if a == "relu"]
    return float(min(near, default=np.inf))


def check_gradients(spec: NetSpec, seed: int = 0, h: float = 1e-5, loss: str = "mse",
                    batch: int = 4, kink_margin: float = 1e-3) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Covers every weight, bias and input entry on a random instance. Inputs
    are resampled until every rectifier pre-activation is at least
    ``kink_margin`` away from zero.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ParameterError("h must lie in [1e-7, 1e-3]")
    rng = np.random.default_rng(seed)
    params = init_params(spec, rng)
    params = NetParams(params.weights, tuple(rng.normal(0, 0.1, b.shape) for b in params.biases))
    for _ in range(1000):
        x = rng.normal(size=(batch, spec.widths[0]))
        if kink_distance(params, spec, x) > kink_margin:
            break
    _, cache = net_forward(params, spec, x)
    if loss == "bce":
        y = (rng.uniform(size=cache.output.shape) > 0.5).astype(float)
    else:
        y = rng.normal(size=cache.output.shape)

    def objective():
        _, c = net_forward(params, spec, x)
        return loss_and_grad(loss, c, y)[0]

    _, cache = net_forward(params, spec, x)
    _, g, wrt = loss_and_grad(loss, cache, y)
    grads, gx = net_backward(cache, g, wrt=wrt)
    worst = 0.0
    for p, gp in zip(params.arrays(), grads.arrays()):
        worst = max(worst, max_relative_error(gp, central_difference(objective, p, h)))
    worst = max(worst, max_relative_error(gx, central_difference(objective, x, h)))
    return worst
