import numpy as np
import pytest

from regimefx.esscher import JumpSpec
from regimefx.markov_regime import EURUSD_2000_2013, RateMatrix, RegimeSet, TransitionMatrix, transition_to_rate


@pytest.fixture
def three_regimes() -> RegimeSet:
    return RegimeSet(
        mu=[0.08, -0.06, 0.0],
        sigma=[0.10, 0.14, 0.08],
        lam=[1.0, 1.5, 0.5],
        rd=[0.03, 0.03, 0.025],
        rf=[0.01, 0.015, 0.01],
    )


@pytest.fixture
def three_rate() -> RateMatrix:
    return RateMatrix([[-2.0, 1.5, 0.5], [1.0, -3.0, 2.0], [0.7, 0.8, -1.5]])


@pytest.fixture
def fixture_rate() -> RateMatrix:
    return transition_to_rate(TransitionMatrix(EURUSD_2000_2013))


@pytest.fixture
def exp5() -> JumpSpec:
    return JumpSpec.exponential(5.0)


@pytest.fixture
def point_mass() -> JumpSpec:
    return JumpSpec.point_mass(1.05)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
