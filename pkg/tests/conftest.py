import numpy as np
import pytest

from touchnet.datamodel import N_CODES, Dataset
from touchnet.synthgen import generate, scenario_config


def make_dataset(X, y, lookback=1216, prefix="r"):
    X = np.asarray(X)
    return Dataset(X=X, y=np.asarray(y), user_ids=tuple(f"{prefix}{i}" for i in range(len(X))), lookback_days=lookback)


def two_clusters(n=200, seed=0, gap=6.0):
    """Linearly separable count-like data: positives shifted up on a few codes."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = rng.poisson(2.0, size=(n, N_CODES)).astype(float)
    X[y == 1, :3] += gap * 3
    return X, y


@pytest.fixture(scope="session")
def separable():
    X, y = two_clusters(200, seed=1)
    Xv, yv = two_clusters(100, seed=2)
    return make_dataset(X, y, prefix="t"), make_dataset(Xv, yv, prefix="v")


@pytest.fixture(scope="session")
def small_population():
    cfg = scenario_config("default", n_users=600, seed=5)
    records, truth = generate(cfg)
    return cfg, records, truth


@pytest.fixture(scope="session")
def full_population():
    cfg = scenario_config("default", n_users=20556, seed=2024)
    records, truth = generate(cfg)
    return cfg, records, truth


DESK_SEED = 11
DESK_USERS = 4000


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """generate -> train (desk) -> compare through the CLI, once per scenario per session."""
    from touchnet.cli import run

    cache = {}

    def get(scenario="default"):
        if scenario not in cache:
            root = tmp_path_factory.mktemp(f"desk_{scenario}")
            data, model, cmp = root / "data", root / "model", root / "compare"
            gen = ["generate", "--users", str(DESK_USERS), "--seed", str(DESK_SEED), "--scenario", scenario]
            assert run(gen + ["--out", str(data)]) == 0
            train = ["train", "--data", str(data), "--profile", "desk", "--seed", str(DESK_SEED)]
            assert run(train + ["--out", str(model)]) == 0
            assert run(["compare", "--data", str(data), "--model", str(model), "--out", str(cmp)]) == 0
            cache[scenario] = root
        return cache[scenario]

    return get


# criterion number -> (passed, line); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n][1])
