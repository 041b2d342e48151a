import numpy as np
import pytest

from fibercut import _accel
from fibercut.phantom import TorusSpec, centered_grid, torus_phantom


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    """Run the test once on the compiled kernels and once on the fallback."""
    if request.param == "numba" and not _accel.NUMBA_AVAILABLE:
        pytest.skip("numba not installed")
    with _accel.use_numba(request.param == "numba"):
        yield request.param


@pytest.fixture(scope="session")
def torus_spec():
    # full ring in x/y, only +-16 mm in z: the tube is 5 mm thick
    return TorusSpec(grid=centered_grid((128, 128, 32)))


@pytest.fixture(scope="session")
def torus(torus_spec):
    return torus_phantom(torus_spec)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
