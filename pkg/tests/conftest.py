import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rotation(n, rng):
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


ACCEPTANCE = pytest.StashKey[dict]()
CRITERIA = range(1, 10)


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def criterion(request):
    """Record the outcome of one acceptance criterion for the summary."""
    results = request.config.stash[ACCEPTANCE]
    results.setdefault("ran", True)

    def record(number: int, passed: bool, detail: str) -> bool:
        results[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}")
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash[ACCEPTANCE]
    if not results.get("ran"):
        return
    terminalreporter.section("acceptance criteria")
    for n in CRITERIA:
        passed, detail = results.get(n, (False, "no result recorded"))
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'} | {detail}")
