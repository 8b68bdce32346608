import pytest

from rhscatter.forward import build_dataset
from rhscatter.potentials import Disk, make_bump, zero_potential
from rhscatter.reconstruct import build_context
from rhscatter.spectral import ContourSpec, build_contour, build_exterior_grid

E = 1.0
RHO = 0.25
DOMAIN = Disk((0.0, 0.0), 1.0)


@pytest.fixture(scope="session")
def bump32():
    return make_bump(DOMAIN, (0.1, -0.05), 0.85, 0.1, 32)


@pytest.fixture(scope="session")
def contour16():
    return build_contour(ContourSpec(E, RHO, 16))


@pytest.fixture(scope="session")
def small_grid():
    return build_exterior_grid(E, RHO, cmax_factor=8.0, nradial=8, ntheta=16)


@pytest.fixture(scope="session")
def small_dataset(bump32, contour16, small_grid):
    return build_dataset(bump32, contour16, small_grid, n_f_angles=8)


@pytest.fixture(scope="session")
def small_context(small_dataset):
    return build_context(small_dataset)


@pytest.fixture(scope="session")
def zero_dataset(contour16, small_grid):
    return build_dataset(zero_potential(DOMAIN, 16), contour16, small_grid, n_f_angles=8)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in config.acceptance_lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acceptance_log(request):
    lines = request.config.acceptance_lines

    def log(number: int, title: str, passed: bool, detail: str) -> None:
        line = f"{'PASS' if passed else 'FAIL'} criterion {number} ({title}): {detail}"
        print(line)
        lines.append(line)

    return log
