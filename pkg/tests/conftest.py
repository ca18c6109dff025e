import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from packages.esc.costs import quadratic, quartic2d  # noqa: E402
from packages.esc.dither import make_dither  # noqa: E402

Q_EXAMPLE = [[3.0, 1.0], [1.0, 2.0]]


@pytest.fixture
def quartic():
    return quartic2d()


@pytest.fixture
def quad():
    return quadratic(Q_EXAMPLE)


@pytest.fixture
def skewed_dither():
    """Rates (1, 3) with r = (12, 1)/sqrt(145): the average origin is an unstable focus."""
    return make_dither([1, 3], [12, 1], amplitude=0.1)


@pytest.fixture
def balanced_dither():
    """Rates (1, 3) with r = (1, 1)/sqrt(2)."""
    return make_dither([1, 3], [1, 1], amplitude=0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def random_spd(rng):
    def sample(n, spread=3.0):
        M = rng.standard_normal((n, n))
        values = np.exp(rng.uniform(-spread / 2, spread / 2, size=n))
        V, _ = np.linalg.qr(M)
        return (V * values) @ V.T

    return sample
