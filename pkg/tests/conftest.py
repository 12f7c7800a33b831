import sys
from pathlib import Path

import pytest

# oracles.py lives next to the tests and is imported as a plain module
sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: dict[int, str] = {}


@pytest.fixture(scope="session")
def criterion_log():
    """Record one verdict line per acceptance criterion; printed in the terminal summary."""
    def record(number: int, passed: bool, detail: str) -> bool:
        _CRITERIA[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(_CRITERIA[number])
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
