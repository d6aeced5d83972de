import pytest

_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_CRITERIA] = {}


@pytest.fixture
def criterion(request, capsys):
    """Record and print one pass/fail line for an acceptance criterion."""
    def report(number: int, passed: bool, detail: str):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        request.config.stash[_CRITERIA][number] = line
        with capsys.disabled():
            print(f"\n{line}")
        return passed
    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
