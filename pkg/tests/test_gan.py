import json
import math

import numpy as np
import pytest

from dtaigan.core import Dataset, Schema, TargetSpec, fit_normalizer
from dtaigan.errors import ContractError, ParameterError
from dtaigan.gan import (
    Q_MAX,
    Q_MIN,
    GanConfig,
    GeneratorModel,
    auxiliary_terms,
    compute_quality,
    generator_spec,
    init_state,
    normalize_variant,
    sample_generator,
    train,
    train_step,
)
from dtaigan.nn import NetParams, NetSpec, Surrogates, central_difference, kink_distance, max_relative_error

SMALL = dict(gen_hidden=(16,), disc_hidden=(16,), latent_dim=4, batch_size=8)


def away_from_kinks(rng, surrogates, B, margin=1e-3):
    """Random normalized designs whose surrogate rectifiers sit at least ``margin`` from zero."""
    while True:
        x = rng.uniform(0.05, 0.95, size=(B, 8))
        if min(kink_distance(surrogates.regressor, surrogates.regressor_spec, x),
               kink_distance(surrogates.classifier, surrogates.classifier_spec, x)) > margin:
            return x


def untrained(schema, norm, seed=0, **kw):
    cfg = GanConfig(seed=seed, **{**SMALL, **kw})
    return GeneratorModel(generator_spec(schema, cfg), init_state(schema, cfg).gen, norm, schema), cfg


def mixed_data(mixed_schema, n=60, seed=0):
    rng = np.random.default_rng(seed)
    cont = np.column_stack([rng.uniform(1, 3, n), rng.uniform(0, 90, n)])
    cats = np.eye(3)[rng.integers(0, 3, n)]
    perf = rng.uniform(0.5, 2.0, (n, 2))
    return Dataset(mixed_schema, np.hstack([cont, cats]), perf, rng.uniform(size=n) < 0.7)


def test_variant_names():
    assert normalize_variant("no-dtai-no-clf") == "no_dtai_no_clf"
    with pytest.raises(ParameterError):
        normalize_variant("bogus")


def test_sampling_examples(mixed_schema):
    data = mixed_data(mixed_schema)
    model, _ = untrained(mixed_schema, fit_normalizer(data))
    assert np.array_equal(sample_generator(model, 1, 7), sample_generator(model, 1, 7))
    x = sample_generator(model, 250, 0, hard=True)
    for start, stop in mixed_schema.categorical_groups:
        block = x[:, start:stop]
        assert np.all(np.isin(block, (0.0, 1.0))) and np.all(block.sum(axis=1) == 1.0)
    assert np.all((x >= 0) & (x <= 1))
    soft = sample_generator(model, 250, 0, hard=False)
    assert np.allclose(soft[:, 2:].sum(axis=1), 1.0, atol=1e-12)


def _constant_surrogates(feasibility_logit, perf_value):
    """One-objective surrogates with constant outputs, for product checks."""
    schema = Schema.from_dict({"design_continuous": ["x"], "performance": ["p"], "feasibility": "f"})
    data = Dataset(schema, [[0.0], [1.0]], [[1.0], [3.0]], [True, False])
    norm = fit_normalizer(data)
    spec_r = NetSpec((1, 1), ("identity",))
    bias = (perf_value - norm.perf_mean[0]) / norm.perf_std[0]
    reg = NetParams((np.zeros((1, 1)),), (np.array([bias]),))
    spec_c = NetSpec((1, 1), ("sigmoid",))
    clf = NetParams((np.zeros((1, 1)),), (np.array([feasibility_logit]),))
    return Surrogates(spec_r, reg, spec_c, clf, norm)


def test_quality_product_example():
    # DTAI 0.8 at r = 1 + ln 2.5 with alpha = beta = 1, target 1
    targets = TargetSpec([1.0], [1.0], [1.0], ("maximize",))
    surrogates = _constant_surrogates(0.0, 1.0 + math.log(2.5))
    x = np.full((3, 1), 0.4)
    q, _, dtai = compute_quality(x, surrogates, targets, "proposed", return_dtai=True)
    assert np.allclose(dtai, 0.8, atol=1e-12)
    assert np.allclose(q, 0.4, atol=1e-12)
    q_perf, _ = compute_quality(x, surrogates, targets, "no_clf")
    assert np.allclose(q_perf, 0.8, atol=1e-12)


def test_quality_no_clf_equals_performance_term(ring8_context):
    data, norm, targets, surrogates = ring8_context
    x = np.random.default_rng(0).uniform(size=(20, 8))
    q_perf, _, dtai = compute_quality(x, surrogates, targets, "no_clf", return_dtai=True)
    assert np.array_equal(q_perf, np.clip(dtai, Q_MIN, Q_MAX))
    q, _ = compute_quality(x, surrogates, targets, "proposed")
    f = surrogates.predict_feasibility(x)
    assert np.allclose(q, np.clip(dtai * f, Q_MIN, Q_MAX), rtol=0, atol=1e-15)


def test_quality_contract(ring8_context):
    _, _, targets, surrogates = ring8_context
    with pytest.raises(ContractError):
        compute_quality(np.zeros((3, 5)), surrogates, targets, "proposed")
    with pytest.raises(ContractError):
        compute_quality(np.zeros((3, 8)), surrogates, targets, "no_dtai")


@pytest.mark.parametrize("variant", ["proposed", "no_dtai", "no_clf", "no_dtai_no_clf"])
def test_quality_gradient_finite_differences(ring8_context, variant):
    _, _, targets, surrogates = ring8_context
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(25):
        B = int(rng.integers(1, 9))
        x = away_from_kinks(rng, surrogates, B)
        w = rng.dirichlet(np.ones(3))
        q, dq = compute_quality(x, surrogates, targets, variant, weights=w)
        fd = central_difference(lambda: compute_quality(x, surrogates, targets, variant, weights=w)[0].sum(), x, 1e-5)
        worst = max(worst, max_relative_error(dq, fd))
        assert np.all((q >= Q_MIN) & (q <= Q_MAX))
    assert worst < 1e-4


def test_collapsed_batch_has_larger_dpp_loss(ring8_context):
    _, _, targets, surrogates = ring8_context
    cfg = GanConfig()
    rng = np.random.default_rng(0)
    spread = rng.uniform(0.2, 0.8, size=(16, 8))
    collapsed = 0.5 + 1e-4 * rng.standard_normal((16, 8))
    assert auxiliary_terms(collapsed, surrogates, targets, cfg)[0] > auxiliary_terms(spread, surrogates, targets, cfg)[0]


def _real_batch(data, norm, n=8):
    return norm.transform_designs(data.designs[:n])


def test_step_determinism(ring8_context):
    data, norm, targets, surrogates = ring8_context
    cfg = GanConfig(**SMALL)
    real = _real_batch(data, norm)
    a = train_step(init_state(data.schema, cfg), real, cfg, data.schema, surrogates, targets)
    b = train_step(init_state(data.schema, cfg), real, cfg, data.schema, surrogates, targets)
    assert a[1] == b[1]
    assert all(np.array_equal(p, q) for p, q in zip(a[0].gen.arrays(), b[0].gen.arrays()))


def test_gamma1_zero_matches_vanilla_bitwise(ring8_context):
    data, norm, targets, surrogates = ring8_context
    real = _real_batch(data, norm)
    off = GanConfig(gamma1=0.0, variant="proposed", **SMALL)
    van = GanConfig(variant="vanilla", **SMALL)
    on = GanConfig(variant="proposed", **SMALL)
    s_off, s_van, s_on = (init_state(data.schema, c) for c in (off, van, on))
    for _ in range(3):
        s_off, _ = train_step(s_off, real, off, data.schema, surrogates, targets)
        s_van, _ = train_step(s_van, real, van, data.schema, surrogates, targets)
        s_on, _ = train_step(s_on, real, on, data.schema, surrogates, targets)
    assert all(np.array_equal(p, q) for p, q in zip(s_off.gen.arrays(), s_van.gen.arrays()))
    assert not all(np.array_equal(p, q) for p, q in zip(s_on.gen.arrays(), s_van.gen.arrays()))


def test_zero_steps_returns_seeded_initial_generator(ring8_context):
    data, norm, targets, surrogates = ring8_context
    cfg = GanConfig(steps=0, **SMALL)
    model, log = train(data, surrogates, targets, cfg)
    init = init_state(data.schema, cfg).gen
    assert log == []
    assert all(np.array_equal(p, q) for p, q in zip(model.params.arrays(), init.arrays()))


def test_training_freezes_surrogates_and_is_reproducible(ring8_context):
    data, norm, targets, surrogates = ring8_context
    before = [a.copy() for a in surrogates.regressor.arrays() + surrogates.classifier.arrays()]
    cfg = GanConfig(steps=30, log_every=10, variant="no_dtai", **SMALL)
    m1, log1 = train(data, surrogates, targets, cfg)
    m2, log2 = train(data, surrogates, targets, cfg)
    after = surrogates.regressor.arrays() + surrogates.classifier.arrays()
    assert all(np.array_equal(a, b) for a, b in zip(before, after))
    assert json.dumps(m1.to_dict()) == json.dumps(m2.to_dict())
    assert log1 == log2 and [row["step"] for row in log1] == [10, 20, 30]
    again = GeneratorModel.from_dict(json.loads(json.dumps(m1.to_dict())))
    assert np.array_equal(sample_generator(again, 5, 1), sample_generator(m1, 5, 1))
