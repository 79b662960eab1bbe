import numpy as np
import pytest

from breatherlab.potential import PotentialSpec, build_chart


@pytest.fixture(scope="session")
def V8():
    return PotentialSpec.monomial(8)


@pytest.fixture(scope="session")
def V0():
    return PotentialSpec.zero()


@pytest.fixture(scope="session")
def chart8(V8):
    """Chart for V = q^8 covering the actions used across the suite."""
    return build_chart(V8, 0.05, 0.8, n_grid=256)


@pytest.fixture(scope="session")
def chart0(V0):
    return build_chart(V0, 0.05, 0.8, n_grid=128)


@pytest.fixture()
def rng():
    return np.random.default_rng(20260810)
