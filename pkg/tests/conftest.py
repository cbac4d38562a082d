import pytest

from nsrenorm.nonlinear import CERTIFICATE_EXPONENTS, estimate_c
from nsrenorm.spectral_field import get_grid
from nsrenorm.stokes import RenormParams, StokesSpectrum, r_hat


@pytest.fixture(scope="session")
def grid8():
    return get_grid(8)


@pytest.fixture(scope="session")
def grid():
    return get_grid(16)


@pytest.fixture(scope="session")
def spec(grid):
    return StokesSpectrum.from_grid(grid)


@pytest.fixture(scope="session")
def renorm(spec):
    return RenormParams.build(spec, r_hat(spec))


@pytest.fixture(scope="session")
def small_estimate(grid):
    return estimate_c(CERTIFICATE_EXPONENTS, grid, 6, 0, hill_climb_steps=3)
