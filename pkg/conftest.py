import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dataset_loader import gmm_points  # noqa: E402
from denoiser import Dataset, DenoiserOutput, OptimalDenoiser  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def pair():
    """Two points at (+-1, 0)"""
    return Dataset([[1.0, 0.0], [-1.0, 0.0]])


@pytest.fixture
def single_point():
    return Dataset([[0.3, -0.7]])


@pytest.fixture
def gmm2():
    return gmm_points(np.random.default_rng(7), modes=2, d=2, spread=0.1, points=16)


@pytest.fixture
def gmm64():
    return gmm_points(np.random.default_rng(64), modes=2, d=64, spread=0.1, points=32)


@pytest.fixture
def pair_denoiser(pair):
    return OptimalDenoiser(pair)


class ConstantDenoiser:
    """r(x, t) = c everywhere"""

    def __init__(self, c):
        self.c = np.asarray(c, dtype=float)

    def __call__(self, x, sigma):
        x = np.asarray(x, dtype=float)
        return DenoiserOutput(r=self.c.copy(), eps=(x - self.c) / sigma)


@pytest.fixture
def constant_denoiser():
    return ConstantDenoiser([0.25, -0.5])
