import os
import sys
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from src.models.convolution import gaussian_psf, make_operator
from src.models.distributions import RngStream
from src.models.grid import ImageGrid


@pytest.fixture
def rng():
    return RngStream(seed=1234, stream_id=0)


@pytest.fixture
def np_rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def small_psf():
    return gaussian_psf(3, 1.0)


@pytest.fixture
def small_operator(small_psf):
    return make_operator(small_psf, (8, 8))


@pytest.fixture
def random_grid(np_rng):
    return ImageGrid(np_rng.normal(size=(8, 8)))
