import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from simmh.conjlinear import LinearProblem, NIGPrior
from simmh.dirmult import DMData, DMParams

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")

# filled by tests/test_acceptance.py, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


def linear_problem(seed=0, n=30, P=4, n_active=2, noise=1.0, prior=None):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, P))
    X = (X - X.mean(0)) / X.std(0, ddof=1)
    beta = np.zeros(P)
    beta[:n_active] = rng.normal(0, 1, n_active) + np.sign(rng.normal(size=n_active))
    y = 0.5 + X @ beta + noise * rng.standard_normal(n)
    return LinearProblem(X, y, prior if prior is not None else NIGPrior.default(P))


def dm_instance(seed=0, n=12, P=3, J=3, depth=20, n_active=1):
    """Small DM data with a few random active coefficients."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, P))
    Y = rng.multinomial(depth, np.full(J, 1.0 / J), size=n)
    Y[:, 0] += rng.poisson(3 * np.exp(0.5 * X[:, 0]))
    data = DMData(Y, X)
    xi = np.zeros((P, J), dtype=np.uint8)
    beta = np.zeros((P, J))
    for _ in range(n_active):
        p, j = rng.integers(P), rng.integers(J)
        xi[p, j] = 1
        beta[p, j] = rng.normal(0, 0.5)
    params = DMParams(data, rng.normal(1.0, 0.3, J), beta, xi)
    return data, params


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
