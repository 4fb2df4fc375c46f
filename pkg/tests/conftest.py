import numpy as np
import pytest

from descent_gnc.frames import AsteroidRotation, SpacecraftParams
from descent_gnc.scenario import load_scenario
from descent_gnc.simulation import prepare, run_closed_loop

SPIN = 3.3118e-4
MU = 4.4621e-4


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def params():
    return SpacecraftParams(np.diag([120.0, 140.0, 100.0]))


@pytest.fixture(scope="session")
def rotation():
    return AsteroidRotation(SPIN)


@pytest.fixture(scope="session")
def leg1_config():
    return load_scenario("leg1")


@pytest.fixture(scope="session")
def leg2_config():
    return load_scenario("leg2")


@pytest.fixture(scope="session")
def leg1_setup(leg1_config):
    return prepare(leg1_config)


@pytest.fixture(scope="session")
def leg2_setup(leg2_config):
    return prepare(leg2_config)


@pytest.fixture(scope="session")
def leg1_log(leg1_config, leg1_setup):
    return run_closed_loop(leg1_config, setup=leg1_setup)


@pytest.fixture(scope="session")
def leg2_log(leg2_config, leg2_setup):
    return run_closed_loop(leg2_config, setup=leg2_setup)
