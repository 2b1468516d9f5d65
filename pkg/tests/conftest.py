import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_VERDICT_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL/SKIP line for an acceptance criterion."""

    def record(name: str, ok: bool | None, detail: str) -> bool | None:
        status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        line = f"{status} {name}: {detail}"
        _VERDICT_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICT_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICT_LINES:
            terminalreporter.write_line(line)
