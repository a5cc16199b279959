import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """``criterion(n, title, ok, detail)`` prints one PASS/FAIL line, then asserts ``ok``."""
    lines = request.config.stash.setdefault(_LINES, [])

    def record(number: int, title: str, ok: bool, detail: str = "") -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {title}" + (f": {detail}" if detail else "")
        lines.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
