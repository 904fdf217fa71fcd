import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ccot.classifier import ScoreFunction, build_regions
from ccot.measures import Domain, discretize, truncate, two_blob_mixture

settings.register_profile(
    "ccot", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("ccot")


class Instance:
    """Grid transport instance: negative-region source and delta-band target."""

    def __init__(self, n, score="f1", delta=0.2):
        self.domain = Domain(nx=n, ny=n)
        self.P = discretize(two_blob_mixture(), self.domain)
        self.regions = build_regions(self.P, ScoreFunction(score), delta)
        self.source = truncate(self.P, self.regions.source_mask)
        self.target = truncate(self.P, self.regions.target_mask)


@pytest.fixture(scope="session")
def instance64():
    return Instance(64)


@pytest.fixture(scope="session")
def instance32():
    return Instance(32)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
