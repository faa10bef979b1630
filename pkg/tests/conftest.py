import numpy as np
import pytest

from recycg import SparseSpdMatrix


def random_spd(n, rng, condition=100.0):
    """Dense random SPD matrix with prescribed condition number."""
    lam = np.geomspace(1.0, condition, n)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    A = (Q * lam) @ Q.T
    return 0.5 * (A + A.T)


def random_spd_matrix(n, rng, condition=100.0):
    """SparseSpdMatrix wrapper around :func:`random_spd`."""
    return SparseSpdMatrix.from_dense(random_spd(n, rng, condition),
                                      keep_zeros=True)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(1234))
