import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line; returns ``ok`` so callers can assert on it."""
    lines = request.config.stash.setdefault(_LINES, [])

    def record(number, title, ok, detail):
        lines.append(f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
        print(lines[-1])
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
