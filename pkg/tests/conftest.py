import numpy as np
import pytest

from rankbet.data import Dataset, Subject
from rankbet.rng import stream_rng


@pytest.fixture
def rng():
    return stream_rng(12345, 0)


def make_dataset(y, a, x=None, mu=0.5, support=None):
    y = np.asarray(y, dtype=float)
    if x is None:
        x = np.zeros((len(y), 1))
    return Dataset.from_arrays(y, a, np.asarray(x, dtype=float), mu=mu, support=support)


def coin_dataset(n, rng, mu=0.5, d=2):
    """Pure-null dataset: outcomes and covariates independent of assignments."""
    a = (rng.random(n) < mu).astype(int)
    x = rng.standard_normal((n, d))
    y = rng.standard_normal(n)
    return Dataset.from_arrays(y, a, x, mu=mu)


def separated_dataset(n, rng, scale=100.0, mu=0.5):
    """Outcomes equal scale * assignment: every posterior should hit 0 or 1."""
    a = (rng.random(n) < mu).astype(int)
    x = rng.standard_normal((n, 1))
    y = scale * a.astype(float)
    return Dataset.from_arrays(y, a, x, mu=mu)


@pytest.fixture
def null_dataset(rng):
    return coin_dataset(40, rng)


def subjects_range(start, count, y=0.0, a=0, d=1, mu=0.5):
    return [Subject(id=i, y=y, a=a, x=(0.0,) * d, mu=mu) for i in range(start, start + count)]
