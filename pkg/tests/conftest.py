"""Shared fixtures plus the acceptance-criteria summary hook.

Acceptance tests call record_criterion() before asserting, so every criterion
prints one PASS/FAIL line even when the assertion fires.  The lines are echoed
again in a terminal section after the run.
"""

import numpy as np
import pytest

_ACCEPTANCE_LINES = []


def record_criterion(name: str, passed: bool, detail: str = "") -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {name}"
    if detail:
        line += f" -- {detail}"
    _ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
