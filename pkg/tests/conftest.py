import numpy as np
import pytest

from dect.geometry import ImageGrid, ScanGeometry, assemble_system_matrix
from dect.physics import ImagePair, default_spectra


@pytest.fixture(scope="session")
def spectra():
    return default_spectra()


@pytest.fixture(scope="session")
def small_problem():
    """8x8 grid with 16 rays (4 angles x 4 detectors) crossing it."""
    grid = ImageGrid(8, 8, 1.0)
    geom = ScanGeometry.uniform(4, 4, detector_spacing=1.7)
    return grid, geom, assemble_system_matrix(grid, geom)


def random_pair(grid, rng, c_scale=0.3, p_scale=2e4):
    c = rng.uniform(0.05, 1.0, grid.shape) * c_scale
    p = rng.uniform(0.05, 1.0, grid.shape) * p_scale
    return ImagePair(grid, c, p)
