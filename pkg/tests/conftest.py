import functools

import numpy as np
import pytest

from mcensemble import harness
from mcensemble.core import Dataset
from mcensemble.synthlab import GeneratorConfig, generate


def make_dataset(n=40, d=3, p=2, M=1.0, n_groups=2, seed=0, labels=None):
    rng = np.random.default_rng(seed)
    Y = rng.uniform(0, M, size=(n, d)) if labels is None else np.asarray(labels, dtype=float)
    n = Y.shape[0]
    return Dataset(rng.standard_normal((n, p)), Y, rng.integers(0, n_groups, size=n), M, n_groups)


class ConstantBase:
    """Base predictor returning one fixed vector everywhere."""

    kind = "constant"

    def __init__(self, value):
        self.value = np.asarray(value, dtype=float)

    def predict(self, features, group_id=None):
        return np.tile(self.value, (len(features), 1))


class TableBase:
    """Base predictor that looks rows up by the first feature (used as an integer row id)."""

    def __init__(self, table):
        self.table = np.asarray(table, dtype=float)

    def predict(self, features, group_id=None):
        return self.table[np.asarray(features)[:, 0].astype(int)]


def indexed_dataset(n=60, d=3, seed=0):
    """Dataset whose first feature is the row index, so TableBase predicts per row."""
    rng = np.random.default_rng(seed)
    Y = rng.uniform(0, 1, (n, d))
    X = np.column_stack([np.arange(n), rng.standard_normal(n)]).astype(float)
    return Dataset(X, Y, rng.integers(0, 2, n), 1.0, 2)


@pytest.fixture(scope="session")
def small_split():
    return generate(GeneratorConfig(seed=3, n_train=800, n_debias=150))


@functools.lru_cache(maxsize=None)
def default_run(experiment):
    """Full default-configuration run of one experiment, shared across test modules."""
    return harness.run_experiment(harness.ExperimentConfig(experiment))


@pytest.fixture(scope="session")
def runs():
    return default_run
