import pytest

_acceptance_lines = []


@pytest.fixture
def acceptance_report():
    """Record one PASS/FAIL line for the acceptance summary, then assert."""

    def report(line, passed):
        _acceptance_lines.append(line)
        print("\n" + line)
        assert passed, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_acceptance_lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
