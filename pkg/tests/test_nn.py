import numpy as np
import pytest

from dtaigan.core import Dataset, Schema, fit_normalizer
from dtaigan.errors import ContractError, DataError, DimensionError, DivergenceError
from dtaigan.nn import (
    AdamState,
    NetParams,
    NetSpec,
    SoftmaxGroups,
    Surrogates,
    TrainConfig,
    adam_step,
    check_gradients,
    init_params,
    net_backward,
    net_forward,
    train_net,
    train_surrogates,
)


def affine(w, b):
    spec = NetSpec((1, 1), ("identity",))
    return spec, NetParams((np.array([[w]], float),), (np.array([b], float),))


def test_forward_examples():
    spec = NetSpec((3, 2), ("identity",))
    params = NetParams((np.zeros((3, 2)),), (np.zeros(2),))
    out, _ = net_forward(params, spec, np.ones((4, 3)))
    assert np.array_equal(out, np.zeros((4, 2)))

    spec, params = affine(2.0, 1.0)
    assert net_forward(params, spec, [[3.0]])[0][0, 0] == 7.0

    spec = NetSpec((1, 2), (SoftmaxGroups(((0, 2),)),))
    params = NetParams((np.zeros((1, 2)),), (np.zeros(2),))
    assert net_forward(params, spec, [[1.0]])[0].tolist() == [[0.5, 0.5]]


def test_forward_shape_mismatch():
    spec, params = affine(1.0, 0.0)
    with pytest.raises(DimensionError):
        net_forward(params, spec, np.ones((2, 3)))
    with pytest.raises(DimensionError):
        net_forward(NetParams((np.ones((2, 1)),), (np.ones(1),)), spec, np.ones((2, 1)))


def test_backward_affine():
    spec, params = affine(-1.5, 0.3)
    for x in (-2.0, 0.0, 4.0):
        _, cache = net_forward(params, spec, [[x]])
        grads, dx = net_backward(cache, np.ones((1, 1)))
        assert grads.weights[0][0, 0] == x
        assert grads.biases[0][0] == 1.0
        assert dx[0, 0] == -1.5


def test_backward_dead_relu():
    spec = NetSpec((1, 1, 1), ("relu", "identity"))
    params = NetParams((np.array([[1.0]]), np.array([[2.0]])), (np.array([-5.0]), np.zeros(1)))
    _, cache = net_forward(params, spec, [[1.0]])
    grads, dx = net_backward(cache, np.ones((1, 1)))
    assert grads.weights[0][0, 0] == 0.0 and grads.biases[0][0] == 0.0 and dx[0, 0] == 0.0


def test_backward_contract_errors():
    spec, params = affine(1.0, 0.0)
    _, cache = net_forward(params, spec, [[1.0]])
    with pytest.raises(ContractError):
        net_backward(cache, np.ones((2, 1)))
    cache.pre.clear()
    with pytest.raises(ContractError):
        net_backward(cache, np.ones((1, 1)))


def test_gradient_checks():
    # quadratic loss: central differences are exact up to roundoff, so a wider step is safe
    assert check_gradients(NetSpec((3, 2), ("identity",)), h=1e-4) < 1e-10
    assert check_gradients(NetSpec.mlp(4, (5,), 1, "sigmoid"), loss="bce") < 1e-5
    assert check_gradients(NetSpec.mlp(4, (6, 5), 3, "identity")) < 1e-5
    soft = NetSpec((4, 6, 7), ("relu", SoftmaxGroups(((2, 5), (5, 7)), temperature=0.7)))
    assert check_gradients(soft, seed=3) < 1e-5


def test_gradient_checks_many_instances():
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        d, h, o = (int(v) for v in rng.integers(1, 9, 3))
        worst = max(worst, check_gradients(NetSpec.mlp(d, (h,), o), seed=seed, batch=int(rng.integers(1, 9))))
    assert worst < 1e-4


def test_adam_zero_gradient():
    spec = NetSpec.mlp(2, (3,), 1)
    params = init_params(spec, np.random.default_rng(0))
    zeros = NetParams.from_arrays(np.zeros_like(a) for a in params.arrays())
    new, state = adam_step(params, zeros, AdamState.zeros_like(params), 1e-3)
    assert state.t == 1
    assert all(np.array_equal(a, b) for a, b in zip(new.arrays(), params.arrays()))


def test_adam_first_step_magnitude_and_direction():
    _, params = affine(0.0, 0.0)
    grads = NetParams((np.array([[3.0]]),), (np.array([-0.2]),))
    state = AdamState.zeros_like(params)
    new, state = adam_step(params, grads, state, 1e-2)
    # bias-corrected first step moves each entry by lr against the gradient sign
    assert new.weights[0][0, 0] == pytest.approx(-1e-2, rel=1e-6)
    assert new.biases[0][0] == pytest.approx(1e-2, rel=1e-6)
    for _ in range(50):
        new, state = adam_step(new, grads, state, 1e-2)
    assert new.weights[0][0, 0] < -0.4 and new.biases[0][0] > 0.4


def test_adam_rejects_non_finite():
    _, params = affine(0.0, 0.0)
    bad = NetParams((np.array([[np.nan]]),), (np.zeros(1),))
    with pytest.raises(DivergenceError):
        adam_step(params, bad, AdamState.zeros_like(params), 1e-3)


def test_softmax_groups_sum_to_one():
    spec = NetSpec((3, 7), (SoftmaxGroups(((0, 3), (4, 7)), temperature=0.3),))
    params = init_params(spec, np.random.default_rng(1))
    out, _ = net_forward(params, spec, np.random.default_rng(2).normal(scale=20, size=(50, 3)))
    assert np.all(np.abs(out[:, 0:3].sum(axis=1) - 1) < 1e-12)
    assert np.all(np.abs(out[:, 4:7].sum(axis=1) - 1) < 1e-12)
    assert np.all((out[:, 3] > 0) & (out[:, 3] < 1))


def test_zero_steps_returns_initial_params():
    spec = NetSpec.mlp(2, (4,), 1)
    init = init_params(spec, np.random.default_rng(0))
    x = np.zeros((10, 2))
    out = train_net(spec, init, x, np.zeros((10, 1)), TrainConfig(steps=0), np.random.default_rng(0))
    assert out is init


def test_training_is_deterministic():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(200, 3))
    y = x.sum(axis=1, keepdims=True)
    spec = NetSpec.mlp(3, (8,), 1)
    cfg = TrainConfig(steps=100, batch_size=16)
    a = train_net(spec, init_params(spec, np.random.default_rng(5)), x, y, cfg, np.random.default_rng(5))
    b = train_net(spec, init_params(spec, np.random.default_rng(5)), x, y, cfg, np.random.default_rng(5))
    assert all(np.array_equal(p, q) for p, q in zip(a.arrays(), b.arrays()))


def test_linear_regression_fit():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(1000, 1))
    y = 2 * x
    yn = (y - y.mean()) / y.std()
    train, hold = np.arange(800), np.arange(800, 1000)
    spec = NetSpec.mlp(1, (64, 64), 1)
    params = train_net(spec, init_params(spec, rng), x[train], yn[train], TrainConfig(), rng)
    pred, _ = net_forward(params, spec, x[hold])
    assert np.sqrt(np.mean((pred - yn[hold]) ** 2)) <= 0.05


def _toy_dataset(n=2000, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(n, 2))
    schema = Schema.from_dict({"design_continuous": ["a", "b"], "performance": ["p"], "feasibility": "f"})
    return Dataset(schema, x, 2 * x[:, :1] + 1, x[:, 0] > 0.5)


def test_separable_classifier_accuracy():
    data = _toy_dataset()
    surrogates = train_surrogates(data, fit_normalizer(data))
    assert surrogates.metrics["classifier_accuracy"] >= 0.98
    probs = surrogates.predict_feasibility(fit_normalizer(data).transform_designs(data.designs))
    assert np.all((probs > 0) & (probs < 1))


def test_surrogates_single_class_rejected():
    data = _toy_dataset(200)
    one_class = Dataset(data.schema, data.designs, data.performances, np.ones(200, bool))
    with pytest.raises(DataError):
        train_surrogates(one_class, fit_normalizer(one_class))


def test_surrogate_checkpoint_round_trip(ring8_context):
    import json

    _, norm, _, surrogates = ring8_context
    doc = json.loads(json.dumps(surrogates.to_dict()))
    again = Surrogates.from_dict(doc)
    xn = np.random.default_rng(0).uniform(size=(20, 8))
    assert np.array_equal(again.predict_performance(xn), surrogates.predict_performance(xn))
    assert np.array_equal(again.predict_feasibility(xn), surrogates.predict_feasibility(xn))
    with pytest.raises(ValueError):
        surrogates.regressor.weights[0][0, 0] = 1.0
