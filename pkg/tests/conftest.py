import pytest

# one line per acceptance criterion, filled in by test_acceptance.py
CRITERIA_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def criterion_report():
    def report(line: str) -> None:
        CRITERIA_LINES.append(line)
        print(line)
    return report
