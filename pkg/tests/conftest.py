"""Shared fixtures and the acceptance-criteria terminal summary.

test_acceptance.py records one outcome per criterion through the
``criterion`` fixture; the hook below prints them as a block of
[PASS]/[FAIL] lines at the end of the run so the gate is readable
without digging through -v output.
"""

from __future__ import annotations

import pytest

_ACCEPTANCE: dict[str, tuple[str, bool]] = {}


@pytest.fixture
def criterion():
    """Record an acceptance criterion outcome; returns the ok flag."""

    def record(key: str, desc: str, ok: bool) -> bool:
        _ACCEPTANCE[key] = (desc, bool(ok))
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        desc, ok = _ACCEPTANCE[key]
        tag = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{tag}] criterion {key}: {desc}")
