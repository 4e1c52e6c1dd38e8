import numpy as np
import pytest

from lider.vectorstore import generate_synthetic


@pytest.fixture(scope="session")
def small_collection():
    """1k clustered unit vectors shared by search-behavior tests."""
    return generate_synthetic(1000, 32, 10, 0.05, seed=3)


@pytest.fixture(scope="session")
def small_queries():
    return generate_synthetic(30, 32, 10, 0.05, seed=21).matrix


@pytest.fixture(scope="session")
def medium_collection():
    """10k clustered unit vectors for index-level tests."""
    return generate_synthetic(10_000, 64, 50, 0.05, seed=7)


@pytest.fixture(scope="session")
def medium_queries():
    return generate_synthetic(50, 64, 50, 0.05, seed=11).matrix


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
