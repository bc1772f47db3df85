import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from steam_eval.data import StudyData
from steam_eval.pipeline import fit_point
from steam_eval.sim import SimScenario, generate_dataset, scenario_config

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_study(n=30, n_unlabeled=25, n_target=25, p=3, seed=0, shift=0.5) -> StudyData:
    """Small study with a genuine covariate shift and a logistic outcome."""
    rng = np.random.default_rng(seed)
    ones = lambda m: np.ones((m, 1))  # noqa: E731
    lx = rng.standard_normal((n, p))
    y = (rng.random(n) < 1 / (1 + np.exp(-(lx[:, 0] - 0.5 * lx[:, 1])))).astype(float)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    ux = rng.standard_normal((n_unlabeled, p))
    tx = rng.standard_normal((n_target, p)) + shift
    return StudyData(np.hstack([ones(n), lx]), y, np.hstack([ones(n_unlabeled), ux]),
                     np.hstack([ones(n_target), tx]), tuple(f"x{j + 1}" for j in range(p)))


@pytest.fixture(scope="session")
def small_sim():
    """A reduced-size simulated study in the default scenario."""
    sc = SimScenario(n=200, N=1500, seed=21)
    return generate_dataset(sc, np.random.default_rng(sc.seed))


@pytest.fixture(scope="session")
def small_fit(small_sim):
    return fit_point(small_sim.data, scenario_config(small_sim.scenario))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
