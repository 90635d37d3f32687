import numpy as np
import pytest

from critbatch.problems import additive_noise, make_logistic, make_quadratic_sine


@pytest.fixture(scope="session")
def quad():
    return make_quadratic_sine(3, 100, 20, np.linspace(0.5, 1.0, 20))


@pytest.fixture(scope="session")
def quad_nc():
    return make_quadratic_sine(4, 50, 8, np.linspace(0.2, 1.0, 8), eps_nc=0.3)


@pytest.fixture(scope="session")
def logistic():
    return make_logistic(5, 200, 10, 0.1)


@pytest.fixture(scope="session")
def noisy():
    return additive_noise()


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(request):
    """Record one pass/fail line per acceptance criterion.

    Usage: ``with criterion(3, "derivatives") as rec: ...; rec.detail = "..."``.
    The line is printed immediately and again in the terminal summary.
    """
    import contextlib
    import time

    class Record:
        detail = ""

    @contextlib.contextmanager
    def run(number, title):
        rec = Record()
        start = time.perf_counter()
        ok = False
        try:
            yield rec
            ok = True
        finally:
            took = time.perf_counter() - start
            line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({took:.1f}s) {rec.detail}".rstrip()
            ACCEPTANCE_LINES.append((number, line))
            print(line)

    return run


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
