import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from srpmask import _backend
from srpmask.data import EventHistory, Fleet

# property suites run 10^3 randomized trials each unless overridden
settings.register_profile("default", max_examples=1000, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("quick", max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(params=_backend.available())
def backend(request):
    return request.param


@pytest.fixture
def small_fleet():
    return Fleet(
        (
            EventHistory((1.2, 2.5, 3.1), 4.0, "a"),
            EventHistory((0.7,), 2.2, "b"),
            EventHistory((), 3.3, "c"),
            EventHistory((0.4, 2.9), 3.5, "d"),
        ),
        3,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_collection_modifyitems(config, items):
    for item in items:
        if getattr(getattr(item, "obj", None), "is_hypothesis_test", False):
            item.add_marker(pytest.mark.property)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance_report(request):
    """Record a one-line verdict and return whether it passed."""
    lines = request.config.stash[_ACCEPTANCE]

    def report(number: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {number:>2} [{'PASS' if ok else 'FAIL'}] {title}" + (f": {detail}" if detail else "")
        lines.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
