import numpy as np
import pytest
from hypothesis import settings

from rescast.synthetic import solar_like, wind_like

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one result line per acceptance criterion for the terminal summary."""

    def record(number, ok, detail):
        status = ok if isinstance(ok, str) else ("PASS" if ok else "FAIL")
        ACCEPTANCE_LINES.append(f"criterion {number}: {status}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def solar_small():
    """Roughly 70 days of synthetic solar data."""
    return solar_like(years=0.2, seed=11)


@pytest.fixture(scope="session")
def wind_small():
    return wind_like(years=0.2, seed=12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
