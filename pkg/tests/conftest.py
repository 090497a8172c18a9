import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("vrail", deadline=None, max_examples=50)
settings.load_profile("vrail")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
