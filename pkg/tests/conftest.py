from __future__ import annotations

import pytest

CRITERIA: list[str] = []


@pytest.fixture
def record():
    """Record one PASS/FAIL line per acceptance criterion and assert it."""

    def _record(label: str, passed: bool, detail: str) -> None:
        line = f"{'PASS' if passed else 'FAIL'} {label}: {detail}"
        CRITERIA.append(line)
        print(line)
        assert passed, line

    return _record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
