import pytest

# Lines recorded by the acceptance tests; printed once at the end of the session.
ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance():
    """Record the pass/fail line of one acceptance criterion."""

    def record(number: int, passed: bool, detail: str):
        line = f"CRITERION {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
