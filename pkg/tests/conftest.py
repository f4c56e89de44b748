import numpy as np
import pytest

from sgdsa.data import Dataset, Minibatch, split
from sgdsa.rng import new_master, substream

ACCEPTANCE_LINES = []


class Quadratic:
    """0.5 * sum(curv * (w - center)**2), independent of the batch; counts calls."""

    def __init__(self, curv, center=0.0):
        self.curv = np.asarray(curv, dtype=float)
        self.center = np.broadcast_to(np.asarray(center, dtype=float), self.curv.shape).copy()
        self.loss_calls = 0
        self.grad_calls = 0
        self.batches = []

    def loss(self, w, batch):
        self.loss_calls += 1
        self.batches.append(batch)
        return float(0.5 * np.sum(self.curv * (np.asarray(w) - self.center) ** 2))

    def loss_and_gradient(self, w, batch):
        self.grad_calls += 1
        self.batches.append(batch)
        d = np.asarray(w) - self.center
        return float(0.5 * np.sum(self.curv * d**2)), self.curv * d


@pytest.fixture
def dummy_batch():
    return Minibatch(np.zeros((1, 1)), np.zeros(1, dtype=int))


@pytest.fixture(scope="session")
def digits():
    sklearn_datasets = pytest.importorskip("sklearn.datasets")
    x, y = sklearn_datasets.load_digits(return_X_y=True)
    return Dataset(x / 16.0, y, 10)


@pytest.fixture(scope="session")
def digits_split(digits):
    return split(digits, 0.2, substream(new_master(0), "shuffle"))


@pytest.fixture
def tiny_dataset():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(40, 5))
    y = (x[:, 0] + x[:, 1] > 0).astype(int) + 2 * (x[:, 2] > 0)
    return Dataset(x, y, 4)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
