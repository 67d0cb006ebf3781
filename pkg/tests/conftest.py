import pytest

CRITERIA_LINES = []


@pytest.fixture
def record_criterion():
    """Record one acceptance line; ``check(number, name, passed, detail)``."""
    def check(number, name, passed, detail=""):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number:2d} {name}: {detail}"
        CRITERIA_LINES.append((number, line))
        print(line, flush=True)
        return passed
    return check


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(CRITERIA_LINES):
            terminalreporter.write_line(line)
