import numpy as np
import pytest
from hypothesis import settings

from delaybsde.delay_core import make_grid, snap_measure
from delaybsde.model import GeneratorSpec, TerminalCondition, make_problem
from delaybsde.stochastics import RegressionBasis, simulate

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def grid50():
    return make_grid(1.0, 50)


@pytest.fixture(scope="session")
def ens_1e4(grid50):
    return simulate(grid50, 10_000, seed=7)


@pytest.fixture(scope="session")
def poly3():
    return RegressionBasis("polynomial", 3)


@pytest.fixture(scope="session")
def delayed_linear_problem(grid50):
    alpha = snap_measure([(-0.5, 0.5), (0.0, 0.5)], grid50)
    return make_problem(grid50, TerminalCondition.brownian(), GeneratorSpec.linear(0.1), alpha)


@pytest.fixture(scope="session")
def martingale_problem(grid50):
    alpha = snap_measure([(0.0, 1.0)], grid50)
    return make_problem(grid50, TerminalCondition.brownian(), GeneratorSpec.zero(), alpha)


def random_frame(rng, shape):
    return rng.standard_normal(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
