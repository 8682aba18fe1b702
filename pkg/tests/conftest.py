import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rieszmf.fields import Box, InitialDensity
from rieszmf.kernels import RieszParams, build_kernel_set

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=(HealthCheck.too_slow,))
settings.load_profile("default")


@pytest.fixture(scope="session")
def params():
    return RieszParams(3, 0.5)


@pytest.fixture(scope="session")
def ks(params):
    return build_kernel_set(params, 0.7)


@pytest.fixture(scope="session")
def box():
    return Box(16.0, 64)


@pytest.fixture(scope="session")
def u0(box):
    return InitialDensity.gaussian(1.0).render(box)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
