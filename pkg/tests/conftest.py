import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

from surfflow.sdf import SignedDistanceVolume  # noqa: E402
from surfflow.synth import ShapeSpec, make_sdf_volume  # noqa: E402

GRID = (64, 64, 64)
CENTER = (31.5, 31.5, 31.5)


@pytest.fixture(scope="session")
def torus_sdf():
    spec = ShapeSpec("torus", radius=12, tube=4, center=CENTER)
    return SignedDistanceVolume.from_array(make_sdf_volume(spec, GRID).data / 16)


@pytest.fixture(scope="session")
def handle_spec():
    return ShapeSpec("handle_sphere", radius=12, handle_radius=7, tube=2.5, center=CENTER)


@pytest.fixture(scope="session")
def handle_sdf(handle_spec):
    return SignedDistanceVolume.from_array(make_sdf_volume(handle_spec, GRID).data / 16)


@pytest.fixture(scope="session")
def sphere_sdf():
    spec = ShapeSpec("sphere", radius=10, center=CENTER)
    return SignedDistanceVolume.from_array(make_sdf_volume(spec, GRID).data / 16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 13):
        terminalreporter.write_line(mod.RESULTS.get(n, f"criterion {n:2d}: FAIL  no verdict (error or not run)"))
