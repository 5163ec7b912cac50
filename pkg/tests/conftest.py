"""Shared fixtures: small grids and the session-wide fitted constants."""

import math

import numpy as np
import pytest

from kslab.experiments import default_settings, fitted_thresholds
from kslab.grid import Grid

PI = math.pi


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def g1():
    return Grid(1, (2.0 * PI,), (64,))


@pytest.fixture(scope="session")
def g2():
    return Grid(2, (2.0 * PI, PI), (16, 12))


@pytest.fixture(scope="session")
def g3():
    return Grid(3, (PI, 2.0, 1.5), (8, 6, 10))


@pytest.fixture(scope="session")
def box3():
    """The production 3D box: (0, pi)^3 at 16 cells per axis."""
    return Grid(3, (PI, PI, PI), (16, 16, 16))


@pytest.fixture(scope="session")
def fitted(box3):
    """(ThresholdSet, ConstantChain) on box3 with the default fit knobs.

    The fit is deterministic (fixed seeds in the default settings), so
    tests may pin its outputs tightly.
    """
    return fitted_thresholds(box3, 1.0, default_settings())
