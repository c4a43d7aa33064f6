import numpy as np
import pytest
from hypothesis import settings

from monodsm.dsm import auto_schedule
from monodsm.operators import catalog_cubic, catalog_linear_fredholm, exact_solution, make_problem

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

C1 = 2.0
GAMMA = 0.9
DELTA = 1e-3

# (criterion, passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE = []


def linear_problem(delta=DELTA, seed=0, dim=100):
    return make_problem(catalog_linear_fredholm(dim), exact_solution("exp", dim, 3.0), delta, seed)


def cubic_problem(delta=DELTA, seed=0, dim=50):
    return make_problem(catalog_cubic(dim, 0.25), exact_solution("exp", dim, 0.3), delta, seed)


def schedule_for(problem, C1=C1, gamma=GAMMA):
    return auto_schedule(problem.operator, problem.f_delta, problem.delta, C1, gamma,
                         y_norm_est=float(np.linalg.norm(problem.y)))[0]


@pytest.fixture(scope="session")
def linear():
    p = linear_problem()
    return p, schedule_for(p)


@pytest.fixture(scope="session")
def cubic():
    p = cubic_problem()
    return p, schedule_for(p)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")
