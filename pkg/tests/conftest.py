"""Shared fixtures; collects the acceptance verdicts for the terminal summary."""

import pytest

_VERDICTS: dict[int, str] = {}


@pytest.fixture
def verdict():
    """``verdict(k, ok, detail)`` records criterion ``k`` and returns ``ok``."""

    def record(k: int, ok: bool, detail: str) -> bool:
        _VERDICTS[k] = f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(_VERDICTS[k])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[k])
