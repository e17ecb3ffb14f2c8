import numpy as np
import pytest

from sparsedict.types import Dictionary, GrayImage


def random_dictionary(rng, m, n):
    D = rng.standard_normal((m, n))
    return Dictionary(D / np.linalg.norm(D, axis=0), allow_undercomplete=n < m)


def orthonormal(rng, m):
    q, _ = np.linalg.qr(rng.standard_normal((m, m)))
    return Dictionary(q)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def camera64():
    from skimage import data, transform

    a = transform.resize(data.camera().astype(float), (64, 64), anti_aliasing=True, preserve_range=True)
    return GrayImage(a)


ACCEPTANCE = []


@pytest.fixture(scope="session")
def criterion():
    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE, key=lambda e: (int(str(e[0]).rstrip("ab")), str(e[0]))):
            terminalreporter.write_line(line)
