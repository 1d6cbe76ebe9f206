import numpy as np
import pytest

from nimatrix.oracles import Dataset, GaussianMixture
from nimatrix.schedule import make_flow, make_vp_continuous, make_vp_linear


@pytest.fixture(scope="session")
def vp():
    return make_vp_linear()


@pytest.fixture(scope="session")
def flow():
    return make_flow()


@pytest.fixture(scope="session")
def vpc():
    return make_vp_continuous()


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def small_dataset():
    r = np.random.default_rng(7)
    return Dataset(atoms=r.standard_normal((20, 4)),
                   labels=np.arange(20) % 3)


@pytest.fixture(scope="session")
def gmm16():
    r = np.random.default_rng(11)
    return GaussianMixture(weights=np.ones(4) / 4,
                           means=r.standard_normal((4, 16)),
                           variances=np.full(4, 0.3))


@pytest.fixture(scope="session")
def ring_gmm():
    """Eight well-separated modes on a circle in 2-D."""
    ang = 2.0 * np.pi * np.arange(8) / 8
    return GaussianMixture(weights=np.ones(8) / 8,
                           means=2.0 * np.stack([np.cos(ang), np.sin(ang)], 1),
                           variances=np.full(8, 0.02))
