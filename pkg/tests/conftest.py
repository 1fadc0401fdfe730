import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from zrplab.model import JumpKernel, PowerLaw, build_environment_iid, constant_rate

settings.register_profile("zrplab", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("zrplab")


@pytest.fixture
def g1():
    return constant_rate()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def env40():
    """Power-law environment on [-20, 20]."""
    return build_environment_iid(PowerLaw(0.5, 2.0), (-20, 20), 7)


@pytest.fixture
def nn75():
    return JumpKernel.nearest_neighbour(0.75)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion_report():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""

    def report(number: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
