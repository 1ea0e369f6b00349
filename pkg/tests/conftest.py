import numpy as np
import pytest

from relu_stability.dataset import Dataset, gen_gaussian_regression
from relu_stability.network import knot_clearance_of
from relu_stability.training import Status, TrainConfig, init_shallow, train_gd

ACCEPTANCE_LINES = []


@pytest.fixture
def two_points():
    return Dataset(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.zeros(2))


@pytest.fixture(scope="session")
def small_minimum():
    """A converged d=3, n=5, k=4 GD minimum with knot clearance > 1e-4."""
    for seed in range(200):
        ds = gen_gaussian_regression(5, 3, 100 + seed)
        res = train_gd(init_shallow(3, 4, 1.0, seed), ds,
                       TrainConfig(eta=0.2, max_steps=30_000, stop_loss=1e-24))
        if res.status == Status.CONVERGED and knot_clearance_of(res.params, ds) > 1e-4:
            return res.params, ds
    raise RuntimeError("no converged instance")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
