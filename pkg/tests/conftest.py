import numpy as np
import pytest

from qavb import datagen

ACCEPTANCE_LINES = []


def record_criterion(name, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_symmetric(rng, k, low=-5.0, high=5.0):
    a = rng.uniform(low, high, size=(k, k))
    return np.triu(a) + np.triu(a, 1).T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_data():
    data, _ = datagen.generate(datagen.GenSpec(k_gen=3, n=60, seed=7, mean_box=6.0))
    return data
