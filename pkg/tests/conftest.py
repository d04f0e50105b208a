import numpy as np
import pytest

from coxhawkes.domain import Domain, GPHyper, TriggerParams
from coxhawkes.gp import Grid1D, Grid2D, precompute_basis
from coxhawkes.likelihood import Background

EXP1_TRIGGER = TriggerParams(0.5, 0.7, 0.5, 0.5)
GP_T = GPHyper(10.0, 1.0)
GP_S = GPHyper(0.25, 1.0)


def make_background(t_max=50.0, n_t=50, n_xy=25, var_frac=0.99):
    gt = Grid1D(t_max, n_t)
    gs = Grid2D((0.0, 1.0), (0.0, 1.0), n_xy, n_xy)
    return Background(gt, precompute_basis(gt, GP_T, var_frac), gs, precompute_basis(gs, GP_S, var_frac))


@pytest.fixture(scope="session")
def domain():
    return Domain(50.0)


@pytest.fixture(scope="session")
def background():
    return make_background()


@pytest.fixture(scope="session")
def small_background():
    return make_background(t_max=10.0, n_t=10, n_xy=6)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
