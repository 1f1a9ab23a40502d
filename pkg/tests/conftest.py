import pytest

ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request, capsys):
    """Record one PASS/FAIL line for an acceptance criterion and echo it live."""
    lines = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(number, ok, detail):
        line = f"AC{number:<3d}{'PASS' if ok else 'FAIL'}  {detail}"
        lines[number] = line
        with capsys.disabled():
            print(f"\n{line}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
