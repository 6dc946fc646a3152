"""Shared test plumbing: a registry for acceptance-criterion verdicts so
the run ends with one printed PASS/FAIL line per criterion."""

import pytest

_CRITERION_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def criterion_log():
    """Record (and print) the single verdict line for one criterion."""

    def _record(num: int, ok: bool, detail: str):
        line = f"criterion {num:2d} {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _CRITERION_LINES[num] = line

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERION_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(_CRITERION_LINES):
        terminalreporter.write_line(_CRITERION_LINES[num])
