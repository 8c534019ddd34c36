import numpy as np
import pytest


@pytest.fixture
def gen():
    return np.random.default_rng(20240611)


def random_orthonormal(p, d, gen):
    Q, R = np.linalg.qr(gen.standard_normal((p, d)))
    return Q * np.sign(np.diag(R))


ACCEPTANCE_LINES = []


def report(number, passed, detail):
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
