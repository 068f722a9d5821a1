import pytest

_criteria = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records a result line and asserts ``ok``."""

    def record(number, ok, detail):
        _criteria[number] = (bool(ok), detail)
        assert ok, f"criterion {number}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        ok, detail = _criteria[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
