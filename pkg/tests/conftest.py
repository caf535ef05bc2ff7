import pytest

# criterion id -> (passed, detail), filled by test_acceptance.py
VERDICTS: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def verdict():
    def record(name: str, passed: bool, detail: str) -> None:
        VERDICTS[name] = (passed, detail)
        print(f"{name}: {'PASS' if passed else 'FAIL'} ({detail})")
    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(VERDICTS, key=lambda k: (not k[0].isdigit(), k)):
        ok, detail = VERDICTS[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
