import numpy as np
import pytest

from survdr import Dataset


def make_data(rng, n=200, beta=0.4, censor_scale=2.0, ties=False, p_cov=2):
    """Small confounded survival dataset with covariates z1..z{p_cov}."""
    z = rng.normal(size=(n, p_cov))
    lin = 0.5 * z[:, 0] - 0.3 * z[:, -1]
    x = (rng.random(n) < 1 / (1 + np.exp(-lin))).astype(int)
    t_ev = rng.exponential(1 / np.exp(beta * x + 0.6 * z[:, 0] + 0.2 * z[:, -1]))
    t_c = rng.exponential(censor_scale, size=n)
    time = np.minimum(t_ev, t_c)
    if ties:
        time = np.ceil(time * 10) / 10
    return Dataset(time, t_ev <= t_c, x, z, tuple(f"z{j + 1}" for j in range(p_cov)))


def central_fd(f, theta, h=1e-6):
    theta = np.asarray(theta, float)
    g = np.zeros_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h * max(1.0, abs(theta[j]))
        g[j] = (f(theta + e) - f(theta - e)) / (2 * e[j])
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled in by test_acceptance.py
CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[k])
