import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from custego.codec import encode_coded
from custego.frame_io import synth_frame, synthetic_corpus

settings.register_profile(
    "custego", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("custego")


@pytest.fixture(scope="session")
def scene128():
    return synth_frame("scene", 128, 128, seed=7)


@pytest.fixture(scope="session")
def coded128(scene128):
    return encode_coded(scene128, 32)


@pytest.fixture(scope="session")
def small_video():
    return synthetic_corpus(1, 2, 128, 64, seed=3)[0]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
