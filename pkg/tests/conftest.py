import numpy as np
import pytest

from dfm.model import Coupling, GaussianMixture
from dfm.scenarios import mixture_pair, shifted_pair, standard_pair

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def std1():
    return standard_pair(1)


@pytest.fixture
def std2():
    return standard_pair(2)


@pytest.fixture
def shifted():
    return shifted_pair([1.0, -0.5])


@pytest.fixture
def mixture():
    return mixture_pair()


@pytest.fixture
def random_mixture():
    gen = np.random.default_rng(2024)
    d = 2
    means = gen.normal(size=(3, d)) * 2
    covs = []
    for _ in range(3):
        a = gen.normal(size=(d, d))
        covs.append(a @ a.T + 0.3 * np.eye(d))
    w = gen.dirichlet(np.ones(3))
    return GaussianMixture(w, means, covs)


@pytest.fixture
def correlated_coupling():
    cov = np.array([[1.0, 0.6], [0.6, 1.5]])
    return Coupling([1.0], [[0.2, -0.4]], [cov])
