import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make `oracles` importable

from tubetopo.grid import BinaryMask


def make_mask(data, spacing=None, rank=None) -> BinaryMask:
    return BinaryMask.from_array(np.asarray(data), spacing=spacing, rank=rank)


def solid_cube(grid=9, side=5) -> BinaryMask:
    data = np.zeros((grid, grid, grid), dtype=np.uint8)
    lo = (grid - side) // 2
    data[lo : lo + side, lo : lo + side, lo : lo + side] = 1
    return make_mask(data)


def solid_torus(grid=40, major=10.0, minor=3.2) -> BinaryMask:
    c = (grid - 1) / 2.0
    zz, yy, xx = np.mgrid[0:grid, 0:grid, 0:grid].astype(float)
    ring = np.sqrt((yy - c) ** 2 + (xx - c) ** 2) - major
    data = ring**2 + (zz - c) ** 2 <= minor**2
    return make_mask(data)


def hollow_shell(grid=26, radius=8.0, thickness=1.6) -> BinaryMask:
    c = (grid - 1) / 2.0
    zz, yy, xx = np.mgrid[0:grid, 0:grid, 0:grid].astype(float)
    dist = np.sqrt((zz - c) ** 2 + (yy - c) ** 2 + (xx - c) ** 2)
    data = np.abs(dist - radius) <= thickness
    return make_mask(data)


def annulus_2d(grid=20, inner=3.0, outer=6.5) -> BinaryMask:
    c = (grid - 1) / 2.0
    yy, xx = np.mgrid[0:grid, 0:grid].astype(float)
    r = np.sqrt((yy - c) ** 2 + (xx - c) ** 2)
    data = (r >= inner) & (r <= outer)
    return make_mask(data, rank=2)


def straight_tube(shape=(24, 24, 60), radius=2.5, axis=2) -> BinaryMask:
    zz, yy, xx = np.mgrid[0 : shape[0], 0 : shape[1], 0 : shape[2]].astype(float)
    cz, cy = (shape[0] - 1) / 2.0, (shape[1] - 1) / 2.0
    data = ((zz - cz) ** 2 + (yy - cy) ** 2 <= radius**2) & (xx >= 4) & (xx <= shape[2] - 5)
    return make_mask(data)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
