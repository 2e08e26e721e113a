import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_psd(rng, q, n=None, rank=None):
    """Random Hermitian positive (semi)definite matrices, (q, q) or (n, q, q)."""
    shape = () if n is None else (n,)
    k = rank or q + 2
    a = rng.normal(size=shape + (q, k)) + 1j * rng.normal(size=shape + (q, k))
    return a @ np.conj(np.swapaxes(a, -1, -2)) / k


# one "criterion N: PASS|FAIL ..." line per acceptance check, echoed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
