import numpy as np
import pytest

from fedcontrib.core_ml import Dataset, ModelParams, TrainConfig, make_synthetic_task, split_dataset
from fedcontrib.protocol import FederationConfig, Honest, ParticipantSpec


def random_params(rng, k, d, scale=1.0):
    return ModelParams(scale * rng.standard_normal((k, d)), scale * rng.standard_normal(k))


def random_dataset(rng, n, k, d):
    return Dataset(rng.standard_normal((n, d)), rng.integers(0, k, size=n), k)


def small_federation(seed=0, behaviors=None, rounds=3, weighting="data_size", k=4, d=4,
                     per_user=120, test=400, cfg=None):
    """Four participants on a small synthetic task."""
    behaviors = behaviors or [Honest()] * 4
    n_users = len(behaviors)
    pool = make_synthetic_task(k, d, -(-(n_users * per_user + test) // k), seed)
    shards = split_dataset(pool, [test] + [per_user] * n_users, seed)
    cfg = cfg or TrainConfig(0.5, 2, 16, seed)
    parts = [ParticipantSpec(i, shards[i + 1], b, cfg) for i, b in enumerate(behaviors)]
    return FederationConfig(tuple(parts), shards[0], rounds=rounds,
                            aggregation_weighting=weighting, seed=seed)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def task4():
    return make_synthetic_task(4, 4, 200, seed=5)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one (criterion, passed, detail) entry per acceptance check."""
    return request.config.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    entries = config.stash.get(_ACCEPTANCE, [])
    if not entries:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in entries:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
