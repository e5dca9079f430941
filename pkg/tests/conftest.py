import numpy as np
import pytest

from homotopy_pff.gaussian_model import GaussianLogDensity
from homotopy_pff.scenario_bench import paper_scenario, solve_scenario_homotopy
from homotopy_pff.stability_diagnostics import random_spd


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def diag_pair():
    """M(beta) = diag(1, 2) + beta I."""
    prior = GaussianLogDensity(-np.diag([1.0, 2.0]), np.zeros(2))
    lik = GaussianLogDensity(-np.eye(2), np.zeros(2), role="likelihood")
    return prior, lik


@pytest.fixture
def random_pair(rng):
    def make(n=3, d=None):
        P = random_spd(rng, n, 2.0)
        d = n if d is None else d
        G = rng.standard_normal((d, n))
        prior = GaussianLogDensity(-P, rng.standard_normal(n))
        lik = GaussianLogDensity(-G.T @ G, rng.standard_normal(n), role="likelihood")
        return prior, lik
    return make


@pytest.fixture(scope="session")
def scenario():
    return paper_scenario()


@pytest.fixture(scope="session")
def scenario_pair(scenario):
    return solve_scenario_homotopy(scenario)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
