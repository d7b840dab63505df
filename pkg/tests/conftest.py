import pytest

# (criterion number, label) -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def record(number: int, label: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE[(number, label)] = (bool(passed), detail)
    line = f"{'PASS' if passed else 'FAIL'} criterion {number:2d} {label}: {detail}"
    print(line)


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for (n, label) in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[(n, label)]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n:2d} {label}: {detail}")
