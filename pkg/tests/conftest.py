"""Shared fixtures and dataset builders for the test suite."""

import numpy as np
import pytest

from rocsurface import Dataset, Method, StudyConfig, generate, prepare_fits


def random_dataset(seed, n=40, p=1, ties=False, verify_rate=0.7):
    """A moderate random dataset with every class present among verified."""
    rng = np.random.default_rng(seed)
    t = rng.normal(2.0, 1.5, n)
    if ties:
        t = np.round(t, 1)
    a = rng.normal(0.0, 1.0, (n, p))
    v = (rng.random(n) < verify_rate).astype(int)
    k = rng.integers(1, 4, n)
    v[:6] = 1
    k[:6] = [1, 1, 2, 2, 3, 3]
    d = np.where(v == 1, k, 0)
    return Dataset.from_arrays(t, a, v, d)


def full_dataset(seed, n=40, ties=False):
    """Fully verified variant (FULL estimator applies)."""
    rng = np.random.default_rng(seed)
    t = rng.normal(2.0, 1.5, n)
    if ties:
        t = np.round(t, 1)
    a = rng.normal(0.0, 1.0, (n, 1))
    k = rng.integers(1, 4, n)
    k[:3] = [1, 2, 3]
    return Dataset.from_arrays(t, a, np.ones(n, dtype=int), k)


@pytest.fixture(scope="session")
def study1_dataset():
    """One fixed Study-1 draw (n=250), the workhorse regression instance."""
    return generate(StudyConfig("s1", n=250, reps=1, seed=123), 0)


@pytest.fixture(scope="session")
def study1_fits(study1_dataset):
    return prepare_fits(study1_dataset, [Method.FI, Method.MSI, Method.IPW, Method.SPE])


@pytest.fixture(scope="session")
def separated_toy():
    """Fully verified data whose classes are perfectly split by T."""
    t = np.array([1.0, 1.5, 2.0, 3.0, 3.5, 4.0, 5.0, 5.5, 6.0])
    d = np.array([1, 1, 1, 2, 2, 2, 3, 3, 3])
    a = np.zeros((9, 1))
    return Dataset.from_arrays(t, a, np.ones(9, dtype=int), d)
