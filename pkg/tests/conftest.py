import pytest

_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_KEY] = {}


@pytest.fixture
def acceptance(request):
    """Record ``(criterion, passed, detail)`` for the end-of-run summary."""
    results = request.config.stash[_KEY]

    def record(criterion: int, passed: bool, detail: str = ""):
        results[criterion] = (bool(passed), detail)
        print(f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(results):
        passed, detail = results[c]
        terminalreporter.write_line(f"criterion {c:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
