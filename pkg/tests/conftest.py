import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from prodnet.panel import GrowthPanel

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def make_panel(values, rescaled=False, ids=None):
    values = np.asarray(values, dtype=float)
    ids = ids or [f"f{k}" for k in range(values.shape[0])]
    return GrowthPanel(ids, np.arange(values.shape[1]), values, rescaled=rescaled)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_text(path, text):
    path.write_text(text)
    return path
