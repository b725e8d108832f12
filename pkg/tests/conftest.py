import pytest

_CRITERIA = []


@pytest.fixture
def criterion():
    """Record and print one PASS/FAIL line, then assert the condition."""
    def check(n, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        _CRITERIA.append(line)
        print(line)
        assert ok, line
    return check


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
