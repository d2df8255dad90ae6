import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("qimps", max_examples=100, deadline=None, derandomize=True)
settings.load_profile("qimps")


def random_unitary(rng, n):
    z = (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_state_unitary(seed, D=2):
    return random_unitary(np.random.default_rng(seed), 2 * D)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
