import pytest
from hypothesis import HealthCheck, settings

from core_simulation import ThresholdSimulator
from generating_functions import Model, ModelParams
from second_moment_mod3 import Mod3SecondMoment
from second_moment_ue import UniqueExtSecondMoment

settings.register_profile('lab', max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile('lab')


@pytest.fixture(scope='session')
def mod3_params():
    """mod-3 parameters at scale s = 15 (k = 16)."""
    return ModelParams.from_scale(Model.MOD3, 16, 15.0)


@pytest.fixture(scope='session')
def mod3(mod3_params):
    return Mod3SecondMoment(mod3_params)


@pytest.fixture(scope='session')
def ue_params():
    """Extendible-constraint parameters at scale s = 7 (k = 9)."""
    return ModelParams.from_scale(Model.UE, 9, 7.0)


@pytest.fixture(scope='session')
def ue(ue_params):
    return UniqueExtSecondMoment(ue_params)


@pytest.fixture
def parity_sim():
    return ThresholdSimulator('mod2', 3)


@pytest.fixture
def mod3_sim():
    return ThresholdSimulator('mod3', 3)


@pytest.fixture
def ue_sim():
    return ThresholdSimulator('ue', 3)
