import pytest

_LINES: list[str] = []


@pytest.fixture(scope="session")
def report():
    """Record one acceptance line; all lines are repeated in the terminal summary."""

    def _report(label: str, ok: bool, detail: str = ""):
        line = f"{label}: {'PASS' if ok else 'FAIL'}" + (f"  ({detail})" if detail else "")
        _LINES.append(line)
        print(line, flush=True)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
