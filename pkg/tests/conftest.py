import functools

import pytest

from dpgschwarz.dpg_core import assemble, manufactured_problem
from dpgschwarz.mesh import build_mesh

ACCEPTANCE_LINES = []


@functools.lru_cache(maxsize=None)
def poisson_system(n, with_load=True):
    f = manufactured_problem()[2] if with_load else None
    return assemble(build_mesh(n), f=f)


@pytest.fixture
def system4():
    return poisson_system(4)


@pytest.fixture
def system8():
    return poisson_system(8)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
