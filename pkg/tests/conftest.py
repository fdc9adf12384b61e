"""
Shared test fixtures and configuration for the calibration toolkit test suite.

Provides fixture cameras, seeded generators, synthesized maps and a
command-line runner that captures the JSON printed on stdout.
"""

import json
import logging
import os

import numpy as np
import pytest

# Ensure test environment variables are set before importing app modules
os.environ.setdefault("INCICAL_ENVIRONMENT", "testing")

from src.config import get_settings
from src.geometry import synthesize_incident_map
from src.main import main
from src.models import DepthMap, ImageGeometry, Intrinsics
from src.raster_io import fixture_intrinsics


# ---------------------------------------------------------------------------
# Settings
# ---------------------------------------------------------------------------

@pytest.fixture(autouse=True)
def fresh_settings():
    """Reload settings for every test so monkeypatched env vars take effect."""
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


# ---------------------------------------------------------------------------
# Cameras
# ---------------------------------------------------------------------------

@pytest.fixture
def scannet():
    return fixture_intrinsics("scannet")


@pytest.fixture
def hypersim():
    return fixture_intrinsics("hypersim")


@pytest.fixture
def small_camera():
    """A 96x64 camera with an off-center principal point."""
    return (
        Intrinsics(fx=83.5, fy=86.25, bx=51.3, by=29.7),
        ImageGeometry(width=96, height=64),
    )


@pytest.fixture
def small_map(small_camera):
    k, g = small_camera
    return synthesize_incident_map(k, g)


@pytest.fixture
def rng():
    """Seeded generator; every test gets the same stream."""
    return np.random.default_rng(20240501)


def random_intrinsics(rng: np.random.Generator, g: ImageGeometry) -> Intrinsics:
    """Focal lengths in [200, 4000] and a principal point inside the frame."""
    return Intrinsics(
        fx=float(rng.uniform(200, 4000)),
        fy=float(rng.uniform(200, 4000)),
        bx=float(rng.uniform(0, g.width - 1)),
        by=float(rng.uniform(0, g.height - 1)),
    )


@pytest.fixture
def make_intrinsics():
    return random_intrinsics


# ---------------------------------------------------------------------------
# Depth
# ---------------------------------------------------------------------------

@pytest.fixture
def ramp_depth():
    """Positive depth ramp with a few invalid pixels."""
    ys, xs = np.mgrid[0:24, 0:32]
    values = 1.0 + 0.05 * xs + 0.02 * ys
    values[3, 4] = np.nan
    values[10, 20] = -1.0
    return DepthMap.from_array(values)


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------

class CliResult:
    def __init__(self, status: int, stdout: str):
        self.status = status
        self.stdout = stdout

    @property
    def json(self):
        return json.loads(self.stdout)


@pytest.fixture
def cli(capsys):
    """Run the command line in-process; returns exit status and parsed stdout."""

    def run(*argv: str) -> CliResult:
        capsys.readouterr()
        try:
            status = main([str(a) for a in argv])
        finally:
            # Handlers bound to the captured stderr must not outlive the test.
            logging.getLogger().handlers.clear()
        return CliResult(status, capsys.readouterr().out)

    return run
