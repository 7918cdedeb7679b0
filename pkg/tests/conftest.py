import pytest

RESULTS = pytest.StashKey[dict]()
N_CRITERIA = 10


def pytest_configure(config):
    config.stash[RESULTS] = {}


@pytest.fixture
def report(request):
    """Record one acceptance verdict; returns ``ok`` so tests can assert on it."""
    results = request.config.stash[RESULTS]

    def record(number, ok, detail):
        results[number] = (bool(ok), detail)
        print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}", flush=True)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(RESULTS, {})
    ran_acceptance = any("test_acceptance" in r.nodeid
                         for key in ("passed", "failed", "xfailed", "xpassed", "error")
                         for r in terminalreporter.stats.get(key, []))
    if not ran_acceptance:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        ok, detail = results.get(n, (False, "no result recorded"))
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
