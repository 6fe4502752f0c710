import numpy as np
import pytest

from micalib.data.synthetic import DEFAULT_CAMERA, LidarPattern, render_sequence
from micalib.geometry import PinholeCamera

# a quarter-density scan keeps fixture rendering fast
SPARSE_LIDAR = LidarPattern(azimuth_count=450, elevations_deg=tuple(np.linspace(-24.0, 2.0, 32)))


@pytest.fixture(scope="session")
def small_frames():
    return render_sequence("boxes", 4, seed=11, lidar=SPARSE_LIDAR)


@pytest.fixture(scope="session")
def camera():
    return DEFAULT_CAMERA


@pytest.fixture
def tiny_pinhole():
    return PinholeCamera(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE = []


@pytest.fixture(scope="session")
def acceptance_lines():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
