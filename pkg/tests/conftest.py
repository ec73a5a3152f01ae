import pytest

_RESULTS = {}


@pytest.fixture
def criterion():
    """Record ``(number, passed, detail)`` and print one PASS/FAIL line."""

    def record(number, passed, detail=""):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        _RESULTS[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        terminalreporter.write_line(_RESULTS[n])
