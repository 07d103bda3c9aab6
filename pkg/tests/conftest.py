import numpy as np
import pytest

from volterra_bsde import (
    TimeGrid,
    Volatility,
    fbm,
    graded_grid,
    liouville_fbm,
    sample_paths,
    variance_curve,
)


@pytest.fixture(scope="session")
def kernel_fbm():
    return fbm(0.75, 1.0)


@pytest.fixture(scope="session")
def kernel_liou():
    return liouville_fbm(0.75, 1.0)


@pytest.fixture(scope="session")
def sigma_one():
    return Volatility.constant(1.0)


@pytest.fixture(scope="session")
def varcurve_fbm(kernel_fbm, sigma_one):
    return variance_curve(kernel_fbm, sigma_one, graded_grid(1.0, 128, power=2.0))


@pytest.fixture(scope="session")
def varcurve_liou(kernel_liou, sigma_one):
    return variance_curve(kernel_liou, sigma_one, graded_grid(1.0, 128, power=2.0))


@pytest.fixture(scope="session")
def ensemble_fbm_10k(kernel_fbm, sigma_one):
    """10^4 fBm paths on 256 uniform steps of [0, 1] (acceptance-scale)."""
    grid = TimeGrid.uniform(0.0, 1.0, 256)
    return sample_paths(kernel_fbm, sigma_one, grid, n_paths=10_000, seed=20_240_811)


@pytest.fixture(scope="session")
def xgrid_wide():
    return np.linspace(-10.0, 10.0, 401)
