import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ebbinnot.events import EventStream, SensorGeometry, make_events

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def stream_of(rows, A=240, B=180):
    """EventStream from (t, x, y, p) tuples."""
    rows = list(rows)
    if not rows:
        return EventStream(SensorGeometry(A, B))
    t, x, y, p = zip(*rows)
    return EventStream(SensorGeometry(A, B), make_events(t, x, y, p))


def random_stream(rng, n, A=40, B=30, t_max=100_000):
    t = np.sort(rng.integers(0, t_max, n))
    return EventStream(SensorGeometry(A, B),
                       make_events(t, rng.integers(0, A, n), rng.integers(0, B, n), rng.integers(0, 2, n)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(config.acceptance_lines):
            terminalreporter.write_line(line)
