import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dloshape.jacobian import ControlPointLayout
from dloshape.presets import get_preset
from dloshape.rod import BoundaryState, integrate_ivp

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def rubber():
    return get_preset("rubber_band").params()


@pytest.fixture(scope="session")
def steel():
    return get_preset("steel_cable").params()


@pytest.fixture(scope="session", autouse=True)
def warm_kernels(rubber):
    # first call compiles or loads the numba cache; keep it out of timed tests
    integrate_ivp(BoundaryState.rest(), rubber)


def bent_state(params, seed=0, scale=1.0, pose=True):
    """A smooth bent configuration with wrench in units of the bending stiffness."""
    rng = np.random.default_rng(seed)
    L = params.length
    EI = params.kr[0, 0]
    from dloshape.so3 import exp_so3

    p = rng.uniform(-0.05, 0.05, 3) if pose else np.zeros(3)
    R = exp_so3(rng.uniform(-0.3, 0.3, 3)) if pose else np.eye(3)
    n = scale * rng.uniform(-1, 1, 3) * np.array([1.5, 1.5, 0.5]) * EI / L**2
    m = scale * rng.uniform(-1, 1, 3) * np.array([1.5, 1.5, 0.3]) * EI / L
    return BoundaryState(p, R, n, m)


def layout_for(params, n=4):
    return ControlPointLayout.uniform(params.length, n)
