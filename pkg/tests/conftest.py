import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from viwo.geometry import CameraModel
from viwo.sim import preset, simulate
from viwo.sim.presets import CameraConfig


def random_rotation(rng):
    return Rotation.random(random_state=rng).as_matrix()


def central_diff(f, x, eps=1e-6):
    """Numerical Jacobian of vector function ``f`` at ``x``."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(f(x))
    J = np.zeros((f0.size, x.size))
    for i in range(x.size):
        dx = np.zeros_like(x)
        dx[i] = eps
        J[:, i] = (np.atleast_1d(f(x + dx)) - np.atleast_1d(f(x - dx))) / (2 * eps)
    return J


@pytest.fixture
def cam():
    return CameraConfig().model()


@pytest.fixture
def simple_cam():
    return CameraModel(460.0, 460.0, 376.0, 240.0, 752, 480)


@pytest.fixture(scope="session")
def small_sim():
    """A 20 s simulated run shared across tests (dataset, world, trajectory)."""
    return simulate(preset("small", 1))


# acceptance criteria results, printed in the terminal summary
ACCEPTANCE = []


def report(number, name, ok, detail):
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
