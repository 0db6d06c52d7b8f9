"""Collects the acceptance result lines and prints them after the run."""
import pytest

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def report():
    """``report(number, ok, detail)`` prints and records one result line."""

    def _report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
