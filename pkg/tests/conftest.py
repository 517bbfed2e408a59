import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE = {}


@pytest.fixture
def verdict(request):
    """Record a one-line acceptance summary; printed at the end of the run."""
    def record(criterion, ok, detail):
        _ACCEPTANCE[criterion] = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance")
    for key in sorted(_ACCEPTANCE, key=lambda k: int(k)):
        terminalreporter.write_line(_ACCEPTANCE[key])
