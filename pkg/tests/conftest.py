import numpy as np
import pytest

from volterra_lab.sobolev import TimeGrid


@pytest.fixture
def unit_grid():
    return TimeGrid(1.0, 256)


@pytest.fixture
def fine_grid():
    return TimeGrid(1.0, 1024)


def zero4(t, s, x, a):
    return np.zeros(np.broadcast(t, s, x, a).shape)


def ones4(t, s, x, a):
    return np.ones(np.broadcast(t, s, x, a).shape)
