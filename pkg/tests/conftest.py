import numpy as np
import pytest

from onoffpriv.markov import TransitionMatrix


def random_chain(rng, n: int) -> TransitionMatrix:
    """Strictly positive chain: Dirichlet rows blended with a uniform floor."""
    rows = rng.dirichlet(np.full(n, 2.0), size=n)
    return TransitionMatrix(entries=0.9 * rows + 0.1 / n)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def chain_factory():
    return random_chain
