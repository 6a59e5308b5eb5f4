import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from upgd import fbl
from upgd.unroll import Instances

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# filled by test_acceptance; printed once at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def batch(K=2, Nt=4, n=6, seed=0, snr_db=30.0):
    sys = fbl.SystemParams.from_snr(snr_db, K=K, Nt=Nt)
    H = np.stack([fbl.channel_gen([seed, i], sys, fbl.Geometry()).H for i in range(n)])
    return Instances.initial(fbl.Realization(H, sys))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small():
    return batch()
