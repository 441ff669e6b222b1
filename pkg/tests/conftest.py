import pytest

_LOG = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, ok, detail)``."""
    log = request.config.stash.setdefault(_LOG, [])

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        log.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(_LOG, [])
    if log:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(log):
            terminalreporter.write_line(line)
