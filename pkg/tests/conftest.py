from __future__ import annotations

import numpy as np
import pytest

from nucleate.grid import LevelSetGrid


def circle_sdf(center, radius):
    c = np.asarray(center, float)

    def fn(pts):
        return np.linalg.norm(pts - c, axis=-1) - radius

    return fn


def box_sdf(lo, hi):
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    c = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)

    def fn(pts):
        q = np.abs(pts - c) - half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    return fn


def make_grid_2d(fn, n=64, spacing=1.0):
    return LevelSetGrid.from_sdf(fn, (n, n), spacing)


def make_grid_3d(fn, n=32, spacing=1.0):
    return LevelSetGrid.from_sdf(fn, (n, n, n), spacing)


@pytest.fixture
def rng():
    return np.random.default_rng(17)


def smooth_noise_2d(rng, shape, passes=8):
    """Random field smoothed by repeated box blurs, normalized to max abs 1."""
    f = rng.standard_normal(shape)
    for _ in range(passes):
        f = (f + np.roll(f, 1, 0) + np.roll(f, -1, 0) + np.roll(f, 1, 1) + np.roll(f, -1, 1)) / 5.0
    f /= np.max(np.abs(f)) + 1e-300
    return f
