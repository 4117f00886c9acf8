"""Shared test helpers: synthetic regression data and fast configs."""

import numpy as np
import pytest

from trader import Dataset, TraderConfig


def make_regression(n, p, s=0, seed=0, beta=None, noise_sd=1.0,
                    has_intercept=False, intercept=0.0):
    """Gaussian-design dataset with a sparse 0.5-valued coefficient head."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p))
    if beta is None:
        beta = np.zeros(p)
        beta[:s] = 0.5
    beta = np.asarray(beta, dtype=float)
    y = intercept + x @ beta + noise_sd * rng.normal(size=n)
    return Dataset(x, y, has_intercept), beta


@pytest.fixture
def quick_config():
    """Small-but-functional MCMC schedule for unit tests."""
    return TraderConfig(n_warmup=100, n_samples=100, n_chains=2, seed=3)
