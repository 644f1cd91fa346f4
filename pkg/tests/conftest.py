import numpy as np
import pytest

from nwacal import GenConfig, generate_population, poisson_design, srs_design


@pytest.fixture(scope="session")
def study_population():
    """Default-settings population: N=1000, mu=(4,4), rho=0.6, lam=(0.1,0.4)."""
    return generate_population(GenConfig(N=1000, seed=42))


@pytest.fixture(scope="session")
def small_population():
    """Small population for fast replicate loops."""
    return generate_population(GenConfig(N=200, seed=7))


@pytest.fixture(scope="session")
def study_srs(study_population):
    return srs_design(study_population.size, 100)


@pytest.fixture(scope="session")
def study_poisson(study_population):
    return poisson_design(study_population, 100.0)


def random_instance(seed: int, n: int = 20, q: int = 2):
    """A small sample-level dataset: x with intercept, pi, r, y."""
    rng = np.random.default_rng(seed)
    x1 = rng.normal(4.0, 1.0, size=(n, q - 1))
    x = np.column_stack([np.ones(n), x1])
    pi = rng.uniform(0.2, 0.9, size=n)
    p = 1.0 / (1.0 + np.exp(-(x @ np.linspace(0.1, 0.4, q))))
    r = (rng.random(n) < p).astype(np.int64)
    y = x @ rng.normal(1.0, 0.5, size=q) + rng.normal(0, 0.5, size=n)
    return x, pi, r, y
