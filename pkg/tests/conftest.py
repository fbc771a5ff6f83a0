import numpy as np
import pytest
from hypothesis import HealthCheck, settings

# Property tests share one profile: no wall-clock deadline (first calls may
# trigger JIT compilation) and a fixed derandomized seed so CI is stable.
settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
