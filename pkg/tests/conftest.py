import pytest

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one summary line per acceptance criterion."""

    def record(number, name, verdict, detail=""):
        _ACCEPTANCE_LINES.append(f"[{number:>2}] {verdict:<6} {name}" + (f": {detail}" if detail else ""))
        print(_ACCEPTANCE_LINES[-1])

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
