"""Shared pytest plumbing: the --paper-scale option and the acceptance
summary block printed after the run.
"""

from __future__ import annotations

import pytest

_ACCEPTANCE_LINES: list[str] = []


def pytest_addoption(parser):
    parser.addoption(
        "--paper-scale", action="store_true", default=False,
        help="also run full published-sample-count stretch criteria (hours)")


@pytest.fixture(scope="session")
def acceptance_log():
    """Collector for one-line per-criterion verdicts."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
