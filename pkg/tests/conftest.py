import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow training tests")


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line for an acceptance criterion, then assert it."""
    def record(number: int, title: str, ok: bool, detail: str = "") -> None:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {title}  [{detail}]"
        _ACCEPTANCE[number] = line
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
