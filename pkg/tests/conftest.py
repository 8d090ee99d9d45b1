import pytest

ACCEPTANCE = {}


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""
    def record(number, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
        ACCEPTANCE[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE.items()):
            terminalreporter.write_line(line)
