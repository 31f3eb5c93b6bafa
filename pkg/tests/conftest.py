import numpy as np
import pytest
from hypothesis import settings

from hedonic.instance import MarketInstance

# property suites draw the same examples on every run; pass
# --hypothesis-seed to explore others
settings.register_profile("deterministic", derandomize=True)
settings.load_profile("deterministic")

# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = []


def pytest_addoption(parser):
    parser.addoption("--seed", type=int, default=0, help="base seed for the seeded acceptance suites")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

# two consumers, three producers, three qualities; it has two equilibria
# with the same surplus 4
TWO_EQ_U = [[2.0, 1.0, 0.1], [3.0, 2.0, 0.1]]
TWO_EQ_V = [[0.0, 5.0, 5.0], [5.0, 0.0, 5.0], [5.0, 5.0, 0.0]]


def two_eq_market() -> MarketInstance:
    return MarketInstance.from_arrays(TWO_EQ_U, TWO_EQ_V)


def two_eq_allocations():
    """Both optimal orientations, plus the common supply side."""
    a1 = np.zeros((2, 5))
    a1[0, 0] = a1[1, 1] = 1.0
    a2 = np.zeros((2, 5))
    a2[0, 1] = a2[1, 0] = 1.0
    b = np.zeros((3, 5))
    b[0, 0] = b[1, 1] = b[2, 4] = 1.0
    return a1, a2, b


def random_market(rng, m_max=12, n_max=12, k_max=8, lo=-5.0, hi=5.0, unit=False, integer=False):
    m = int(rng.integers(1, m_max + 1))
    n = int(rng.integers(1, n_max + 1))
    K = int(rng.integers(1, k_max + 1))
    if integer:
        U = rng.integers(int(lo), int(hi) + 1, (m, K)).astype(float)
        V = rng.integers(int(lo), int(hi) + 1, (n, K)).astype(float)
    else:
        U = rng.uniform(lo, hi, (m, K))
        V = rng.uniform(lo, hi, (n, K))
    mu = np.ones(m) if unit else rng.uniform(0.2, 2.0, m)
    nu = np.ones(n) if unit else rng.uniform(0.2, 2.0, n)
    return MarketInstance.from_arrays(U, V, mu, nu)


@pytest.fixture
def market():
    return two_eq_market()


@pytest.fixture
def allocations():
    return two_eq_allocations()


@pytest.fixture
def no_trade():
    return MarketInstance.from_arrays([[1.0, 0.0]], [[3.0, 2.0]])


@pytest.fixture
def seed(request):
    return request.config.getoption("--seed")
