import pytest

_LINES = []


@pytest.fixture
def criterion():
    """Record one acceptance line, then assert it."""

    def record(label, passed, detail=""):
        line = f"{label:<34} {'PASS' if passed else 'FAIL'}  {detail}"
        _LINES.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
