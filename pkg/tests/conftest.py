import pytest

_KEY = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """``criterion(n, title)`` registers the running test as acceptance criterion ``n``."""
    results = request.config.stash.setdefault(_KEY, {})

    def register(number: int, title: str):
        results[number] = [title, "FAIL"]
        request.node._criterion_slot = results[number]

    return register


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    slot = getattr(item, "_criterion_slot", None)
    if slot is not None and rep.when == "call":
        slot[1] = "PASS" if rep.passed else "FAIL"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, status = results[number]
        terminalreporter.write_line(f"[{status}] criterion {number}: {title}")
