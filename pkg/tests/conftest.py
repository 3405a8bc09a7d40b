import pytest

# (criterion, passed, detail) lines printed once at the end of the session
ACCEPTANCE_LINES: list[tuple[str, bool, str]] = []


@pytest.fixture
def record_criterion():
    def record(name: str, passed: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append((name, bool(passed), detail))
        print(f"{name}: {'PASS' if passed else 'FAIL'} — {detail}")
        assert passed, f"{name}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in sorted(ACCEPTANCE_LINES, key=lambda line: int(line[0].split()[1].rstrip("abc"))):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
