import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from geocover.locations import build_grid

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

LN = {"ln2": math.log(2), "ln4": math.log(4), "ln6": math.log(6), "ln8": math.log(8)}

# filled by test_acceptance, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def grid3():
    return build_grid(3, 3)


@pytest.fixture(scope="session")
def grid5():
    return build_grid(5, 5)


def random_prior(rng, n, floor=0.0):
    p = rng.dirichlet(np.ones(n)) + floor
    return p / p.sum()
