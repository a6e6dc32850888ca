"""Collects acceptance verdicts and prints them after the test summary."""

import pytest

_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one acceptance line, then fail the test when ``ok`` is false."""

    def record(criterion, ok, detail):
        ok = None if ok is None else bool(ok)
        status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        line = f"criterion {criterion:>2}: {status}  {detail}"
        _VERDICTS.append(line)
        print(line)
        if ok is None:
            pytest.skip(detail)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
