import time
from contextlib import contextmanager

import pytest

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def criterion(request):
    """Context manager that times a numbered criterion and records a pass/fail line.

    The body may put a short summary into the yielded dict under ``"detail"``.
    Exceeding ``budget`` seconds fails the criterion even if every assertion held.
    """
    lines = request.config.stash[_LINES]

    @contextmanager
    def run(number, title, budget=None):
        info = {"detail": ""}
        t0 = time.perf_counter()
        ok = False
        try:
            yield info
            ok = True
        finally:
            elapsed = time.perf_counter() - t0
            in_time = budget is None or elapsed < budget
            limit = f" / {budget:.0f}s" if budget is not None else ""
            status = "PASS" if ok and in_time else "FAIL"
            line = f"criterion {number:2d} {status}  {title}  [{elapsed:.1f}s{limit}]"
            if info["detail"]:
                line += f"  {info['detail']}"
            lines.append(line)
            print(line)
        if not in_time:
            raise AssertionError(f"criterion {number} took {elapsed:.1f}s, budget {budget}s")

    return run


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
