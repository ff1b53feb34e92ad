import numpy as np
import pytest

from yamabelab.grid import Domain, GridFunction


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def radial5():
    return Domain.radial_ball(5, 1.0, 1001)


@pytest.fixture(scope="session")
def box3():
    # 9^3 cells, dyadic spacing so cell volumes are exact
    return Domain.box(3, -0.5625, 0.5625, 0.125)


@pytest.fixture(scope="session")
def ball3():
    return Domain.cartesian_ball(3, 1.0, 0.125)


def random_field(dom, rng, positive=False):
    vals = rng.standard_normal(dom.size)
    if positive:
        vals = np.abs(vals) + 0.1
    return GridFunction(dom, vals)


_CRITERIA: list[str] = []


def record_criterion(line: str) -> None:
    _CRITERIA.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
