import numpy as np
import pytest

from nonlocal_ramsey.calculus import PairSet
from nonlocal_ramsey.geometry import Domain, build_grid
from nonlocal_ramsey.kernel import KernelParams
from nonlocal_ramsey.model import ModelParams, ProductivityData, constant_profile, gaussian_bump
from nonlocal_ramsey.solver import SolverSettings, StateProblem


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def domain_1d():
    return Domain(dim=1, lower=(0.0,), upper=(1.0,), epsilon=0.2)


@pytest.fixture
def kernel_1d():
    return KernelParams(sigma=0.1, epsilon=0.2, mu=0.1, dim=1)


@pytest.fixture
def grid_1d(domain_1d):
    # 20 interior points, 4 interaction layers on each side
    return build_grid(domain_1d, 0.05)


@pytest.fixture
def pairs_1d(grid_1d, kernel_1d):
    return PairSet.build(grid_1d, kernel_1d)


@pytest.fixture
def pairs_2d():
    domain = Domain(dim=2, lower=(0.0, 0.0), upper=(1.0, 1.0), epsilon=0.2)
    grid = build_grid(domain, 0.1)
    return PairSet.build(grid, KernelParams(sigma=0.1, epsilon=0.2, mu=0.1, dim=2))


@pytest.fixture
def make_problem(pairs_1d):
    """Build a StateProblem on the 1-D pair set with profile values and parameter overrides."""

    def factory(*, a0=1.0, kT=0.5, steps=20, window=None, picard_tol=1e-12, cg_rtol=1e-12, **overrides):
        grid = pairs_1d.grid
        params = ModelParams(**overrides)
        data = ProductivityData(A0=constant_profile(grid, a0), kT=constant_profile(grid, kT))
        settings = SolverSettings(steps=steps, window=window, picard_tol=picard_tol, cg_rtol=cg_rtol)
        return StateProblem(pairs_1d, params, data, settings)

    return factory


@pytest.fixture
def k0_bump(grid_1d):
    return gaussian_bump(grid_1d, 1.0, 0.2)
