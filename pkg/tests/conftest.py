import numpy as np
import pytest

from kinktrap.model import UnitScale, default_trap


@pytest.fixture(scope="session")
def trap():
    return default_trap()


@pytest.fixture(scope="session")
def scale(trap):
    return UnitScale.from_trap(trap)


@pytest.fixture(scope="session")
def anisotropic_trap():
    """Strongly anisotropic trap of the 31-ion images (wz / wy = 1.34)."""
    return default_trap(ratio=1.34)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
