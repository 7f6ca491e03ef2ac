import pytest

# (criterion, passed, detail) lines collected by the acceptance module
ACCEPTANCE: list = []


@pytest.fixture
def record():
    def _record(criterion: str, passed: bool, detail: str = ""):
        ACCEPTANCE.append((criterion, bool(passed), detail))
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {criterion}: {detail}")
