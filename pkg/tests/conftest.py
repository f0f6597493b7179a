import numpy as np
import pytest

from scal.data import REGRESSION, Dataset


def make_dataset(X, y, task=REGRESSION, start="2020-01-01"):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    ts = np.datetime64(start, "ns") + np.arange(len(X)) * np.timedelta64(1, "h")
    return Dataset(X, np.asarray(y, dtype=float), ts, [f"f{j}" for j in range(X.shape[1])], task)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def interaction_data(rng):
    X = rng.uniform(-1, 1, size=(400, 4))
    y = np.where(X[:, 0] > 0, X[:, 1], -X[:, 1]) + 0.5 * X[:, 2] + rng.normal(scale=0.05, size=400)
    return make_dataset(X, y)
