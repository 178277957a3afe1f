import pytest

ACCEPTANCE = []


@pytest.fixture
def verdict():
    """Record one acceptance line; the summary prints them all at the end of the run."""

    def record(number, name, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number} ({name}): {detail}"
        ACCEPTANCE.append((number, line))
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
