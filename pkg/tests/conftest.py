import hypothesis
import numpy as np
import pytest

from mediasplat.medium import FIELDS, MediumGrid
from mediasplat.scene import Bounds, Camera, Scene

hypothesis.settings.register_profile("default", max_examples=50, deadline=None)
hypothesis.settings.load_profile("default")


def random_scene(rng, n=12, bounds=None, z=(2.0, 4.0)):
    bounds = bounds or Bounds([-2, -2, -1], [2, 2, 6])
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return Scene(rng.uniform([-1, -1, z[0]], [1, 1, z[1]], (n, 3)), q,
                 rng.uniform(-1.8, -1.0, (n, 3)), rng.normal(0, 1.5, n),
                 rng.normal(0, 0.4, (n, 16, 3)), bounds)


def random_medium(rng, bounds, mode="dir_and_pos", spread=0.3):
    m = MediumGrid.homogeneous(bounds, rng.uniform(0.2, 0.6, 3), rng.uniform(0.05, 0.3, 3),
                               rng.uniform(0.05, 0.3, 3), mode)
    for f in FIELDS:
        getattr(m, f)[:] += rng.normal(0, spread, (8, 16, 3))
    return m


def small_camera(rng=None, size=8, f=8.0):
    eye = [0.2, -0.1, -0.5] if rng is None else rng.uniform([-0.3, -0.3, -0.8], [0.3, 0.3, -0.2])
    return Camera.look_at(eye, [0, 0, 3], f, f, size, size)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance lines, printed once at the end of the session
ACCEPTANCE = {}


def report(criterion: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[criterion])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
