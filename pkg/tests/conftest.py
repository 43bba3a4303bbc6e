import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from otprop.core import ClassPartition, WeightedSample

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_problem(rng, I=8, J=6, d=2, K=2):
    """Small random source/target pair with a partition covering every class."""
    src = WeightedSample.uniform(rng.random((I, d)))
    tgt = WeightedSample.uniform(rng.random((J, d)))
    labels = np.concatenate([np.arange(K), rng.integers(0, K, I - K)])
    return src, ClassPartition(labels, K), tgt


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def report(request):
    """Record a one-line verdict for the acceptance summary."""
    marker = request.node.get_closest_marker("criterion")
    number = marker.args[0] if marker else "?"

    def _report(ok: bool, detail: str):
        ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return _report


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
