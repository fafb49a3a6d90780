import functools
import time

import pytest

from relaxcycle.model import Params, vf_reduced, jacobian_reduced
from relaxcycle.integrate import IntegratorConfig, integrate
from relaxcycle.returnmap import find_limit_cycle, section_specs


TIMINGS = {}
ACCEPTANCE = []


@functools.lru_cache(maxsize=None)
def limit_cycle(alpha, xi, eps):
    """Shared limit cycles; each costs several seconds."""
    t0 = time.perf_counter()
    lc = find_limit_cycle(Params(alpha, xi, eps))
    TIMINGS[(alpha, xi, eps)] = time.perf_counter() - t0
    return lc


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@functools.lru_cache(maxsize=None)
def specs(alpha, xi):
    return section_specs(Params(alpha, xi))


@functools.lru_cache(maxsize=None)
def hamiltonian_run(tol=1e-14):
    """Reduced flow at alpha = xi = 0.5 from (1, 1) over T = 100.

    The second order stepper needs tolerance 1e-14 for 1e-8 relative
    conservation of H, which takes close to a minute.
    """
    p = Params(0.5, 0.5)
    return integrate(lambda u: vf_reduced(u, p), lambda u: jacobian_reduced(u, p), [1.0, 1.0],
                     (0.0, 100.0), IntegratorConfig(tol, tol))


@pytest.fixture
def p08():
    return Params(0.8, 0.5, 0.01)
