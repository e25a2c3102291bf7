import numpy as np
import pytest

from dtaigan.benchmark import RING8, make_synthetic_dataset
from dtaigan.core import Schema, compute_targets, fit_normalizer
from dtaigan.nn import TrainConfig, train_surrogates


@pytest.fixture(scope="session")
def ring8_small():
    return make_synthetic_dataset(RING8, 600, seed=3)


@pytest.fixture(scope="session")
def ring8_context(ring8_small):
    """Small dataset with briefly trained surrogates, for fast pipeline tests."""
    data = ring8_small
    norm = fit_normalizer(data)
    targets = compute_targets(data, 75.0)
    surrogates = train_surrogates(
        data, norm,
        TrainConfig(loss="mse", steps=300, hidden=(16, 16), seed=0),
        TrainConfig(loss="bce", steps=300, hidden=(16, 16), seed=1),
    )
    return data, norm, targets, surrogates


@pytest.fixture
def mixed_schema():
    return Schema.from_dict({
        "design_continuous": ["length", {"name": "angle", "bounds": [0, 90]}],
        "design_categorical": {"material": ["steel", "aluminum", "titanium"]},
        "performance": [
            {"name": "weight", "direction": "minimize"},
            {"name": "safety", "direction": "maximize"},
        ],
        "feasibility": "ok",
    })


def random_targets(rng, T, minimize_some=True):
    from dtaigan.core import TargetSpec

    directions = tuple(
        "minimize" if (minimize_some and rng.uniform() < 0.5) else "maximize" for _ in range(T)
    )
    return TargetSpec(
        rng.uniform(0.5, 2.0, T), rng.uniform(0.5, 3.0, T), rng.uniform(0.5, 3.0, T), directions
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance criterion lines at the end of the run."""
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
