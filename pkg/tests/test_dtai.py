import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dtaigan.core import TargetSpec, target_ratios
from dtaigan.dtai import achievement_score, dtai_grad_wrt_performance, dtai_score
from dtaigan.errors import DomainError
from dtaigan.nn import central_difference, max_relative_error

from conftest import random_targets


def scalar_score(r, a, b):
    """Independent scalar evaluation of the piecewise achievement score."""
    if r <= 1:
        return a * (r - 1)
    return a / b * (1 - math.exp(b * (1 - r)))


def scalar_dtai(rs, alphas, betas):
    total = sum(scalar_score(r, a, b) for r, a, b in zip(rs, alphas, betas))
    s_min = -sum(alphas)
    s_max = sum(a / b for a, b in zip(alphas, betas))
    return (total - s_min) / (s_max - s_min)


def spec(T, alpha=1.0, beta=1.0, t=1.0, direction="maximize"):
    return TargetSpec([t] * T, [alpha] * T, [beta] * T, (direction,) * T)


def test_score_examples():
    for a, b in [(1, 1), (0.3, 2.0), (5, 0.1)]:
        assert achievement_score(1.0, a, b) == 0.0
    assert achievement_score(2.0, 1, 1) == pytest.approx(0.6321205588285577, abs=1e-12)
    assert achievement_score(2.0, 1, 1) == pytest.approx(scalar_score(2.0, 1, 1), abs=1e-15)
    big = achievement_score(60.0, 1, 1)
    assert big <= 1.0 and big == pytest.approx(1.0, abs=1e-12)


def test_score_domain():
    with pytest.raises(DomainError):
        achievement_score(0.0, 1, 1)
    with pytest.raises(DomainError):
        achievement_score(1.0, -1, 1)
    with pytest.raises(DomainError):
        achievement_score(1.0, 1, 0)


def test_dtai_examples():
    s = dtai_score([[1.0]], spec(1))
    assert s.dtai[0] == pytest.approx(0.5, abs=1e-12)
    s = dtai_score([[2.0]], spec(1))
    assert s.dtai[0] == pytest.approx(0.8160602794142788, abs=1e-9)
    s = dtai_score([[1e-12, 2.0]], spec(2))
    assert s.dtai[0] == pytest.approx(0.4080301397071394, abs=1e-9)
    assert s.dtai[0] == pytest.approx(scalar_dtai([1e-12, 2.0], [1, 1], [1, 1]), abs=1e-12)
    assert dtai_score([[1e-300]], spec(1)).dtai[0] == pytest.approx(0.0, abs=1e-12)


def test_dtai_matches_scalar_oracle(rng):
    for _ in range(50):
        T = int(rng.integers(1, 6))
        targets = random_targets(rng, T)
        r = rng.lognormal(0, 0.7, size=(4, T))
        got = dtai_score(r, targets).dtai
        want = [scalar_dtai(row, targets.alpha, targets.beta) for row in r]
        assert np.allclose(got, want, atol=1e-12, rtol=0)


def test_dtai_bounded_on_random_inputs(rng):
    n, T = 100_000, 5
    alpha = rng.uniform(0.01, 10, T)
    beta = rng.uniform(0.01, 10, T)
    targets = TargetSpec(np.ones(T), alpha, beta, ("maximize",) * T)
    r = np.exp(rng.uniform(-8, 8, size=(n, T)))
    scores = dtai_score(r, targets)
    assert np.all(scores.dtai >= 0) and np.all(scores.dtai < 1)
    # slope never exceeds the linear-branch value alpha / span
    bound = alpha / ((alpha / beta).sum() + alpha.sum())
    # strictly positive in exact arithmetic; exp underflows to 0 for very large r
    assert np.all(scores.grad_wrt_ratio >= 0)
    assert np.all(scores.grad_wrt_ratio <= bound * (1 + 1e-12))


def test_branch_boundary_slope():
    for a, b in [(1, 1), (2.5, 0.4), (0.2, 3.0)]:
        # both analytic branch slopes equal alpha at r = 1
        s = dtai_score([[1.0], [1.0 + 1e-15]], spec(1, a, b))
        assert s.grad_wrt_ratio[0, 0] == pytest.approx(s.grad_wrt_ratio[1, 0], abs=1e-14)
        h = 1e-7
        right = (achievement_score(1 + h, a, b) - achievement_score(1.0, a, b)) / h
        left = (achievement_score(1.0, a, b) - achievement_score(1 - h, a, b)) / h
        assert abs(right - left) < 1e-6
        eps = 1e-4
        gap = abs(achievement_score(1 + eps, a, b) - achievement_score(1 - eps, a, b))
        assert gap <= 2 * a * eps


@given(
    st.lists(st.floats(1e-3, 50), min_size=1, max_size=5),
    st.integers(0, 4),
    st.floats(1e-3, 5),
)
def test_dtai_strictly_increasing(rs, k, step):
    k = k % len(rs)
    targets = spec(len(rs), alpha=1.3, beta=0.7)
    better = list(rs)
    better[k] = rs[k] + step
    a = dtai_score([rs], targets).dtai[0]
    b = dtai_score([better], targets).dtai[0]
    # strictly increasing before saturation; never decreasing in floating point
    assert b >= a
    if rs[k] < 10:
        assert b > a


def test_alpha_scaling_invariance(rng):
    targets = random_targets(rng, 4)
    scaled = TargetSpec(targets.t, 7.5 * targets.alpha, targets.beta, targets.directions)
    r = rng.lognormal(size=(20, 4))
    assert np.allclose(dtai_score(r, targets).dtai, dtai_score(r, scaled).dtai, atol=1e-14)


def test_linear_cost_shape(rng):
    r = rng.lognormal(size=(7, 9))
    s = dtai_score(r, spec(9))
    assert s.per_objective.shape == (7, 9) and s.dtai.shape == (7,)


def test_grad_wrt_performance_examples():
    targets = spec(1, t=2.0)
    p = np.array([[4.0]])
    r = target_ratios(p, targets)
    g = dtai_grad_wrt_performance(dtai_score(r, targets), r, targets, p)
    assert g[0, 0] == pytest.approx(math.exp(-1) / 4, abs=1e-12)
    fd = (scalar_dtai([(4 + 1e-6) / 2], [1], [1]) - scalar_dtai([(4 - 1e-6) / 2], [1], [1])) / 2e-6
    assert g[0, 0] == pytest.approx(fd, abs=1e-9)
    assert g[0, 0] == pytest.approx(0.0919698602928606, abs=1e-12)

    # linear branch: constant alpha / (t * span)
    for pv in (0.5, 1.0, 1.9):
        p = np.array([[pv]])
        r = target_ratios(p, targets)
        g = dtai_grad_wrt_performance(dtai_score(r, targets), r, targets, p)
        assert g[0, 0] == pytest.approx(1.0 / (2.0 * 2.0), abs=1e-15)

    tmin = spec(1, t=2.0, direction="minimize")
    p = np.array([[3.0]])
    r = target_ratios(p, tmin)
    assert dtai_grad_wrt_performance(dtai_score(r, tmin), r, tmin, p)[0, 0] < 0


def test_grad_wrt_performance_finite_differences(rng):
    worst = 0.0
    for _ in range(100):
        T = int(rng.integers(1, 6))
        targets = random_targets(rng, T)
        p = targets.t * rng.lognormal(0, 0.5, size=(3, T))
        # keep samples off the r = 1 kink in the second derivative
        r = target_ratios(p, targets)
        p = np.where(np.abs(r - 1) < 1e-3, p * 1.01, p)

        def f():
            return dtai_score(target_ratios(p, targets), targets).dtai.sum()

        r = target_ratios(p, targets)
        g = dtai_grad_wrt_performance(dtai_score(r, targets), r, targets, p)
        worst = max(worst, max_relative_error(g, central_difference(f, p, 1e-5)))
    assert worst < 1e-7
