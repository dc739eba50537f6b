import pytest

_criteria = {}


@pytest.fixture
def report():
    """Record one PASS/FAIL line for an acceptance criterion."""
    def _report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _criteria[number] = line
        print(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_criteria):
            terminalreporter.write_line(_criteria[n])
