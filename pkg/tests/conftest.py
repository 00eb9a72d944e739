import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_criteria: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance criterion; the summary is printed at the end of the run."""

    def record(number: int, name: str, ok: bool, detail: str = ""):
        _criteria[number] = (name, bool(ok), detail)
        print(f"criterion {number} {'PASS' if ok else 'FAIL'}: {name} {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        name, ok, detail = _criteria[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {name}  {detail}")
