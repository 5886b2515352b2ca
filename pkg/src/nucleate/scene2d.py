"""Two-phase compositing against a raster target and per-pixel error fields.

The image plane coincides with the grid's world plane, one pixel per node:
pixel (row, col) samples phi at node (ix=col, iy=row). The rendered value is

    out = c_F * (1 - H(phi)) + c_B * H(phi)

so the smoothed characteristic function H is 0 on the foreground and 1 on the
background. gF and gB measure how badly the foreground and background color
would fit the target at each pixel.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .grid import LevelSetGrid
from .images import ImageBuffer, channel_mean
from .mollify import Mollifier, smoothed_heaviside


@dataclass
class SceneModel2D:
    """Foreground/background color model plus the target raster.

    Colors may be scalars (gray), length-3 arrays (constant RGB), or full
    per-pixel maps with the target's shape.
    """

    fg_color: np.ndarray | float
    bg_color: np.ndarray | float
    target: ImageBuffer
    loss_kind: str = "squared"

    def __post_init__(self):
        if self.loss_kind not in ("squared", "absolute"):
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")

    def color_plane(self, which: str) -> np.ndarray:
        """Broadcast a color spec to the target's (H, W, C) shape."""
        color = self.fg_color if which == "fg" else self.bg_color
        h, w, c = self.target.height, self.target.width, self.target.channels
        arr = np.asarray(color, dtype=np.float64)
        if arr.ndim == 0:
            return np.full((h, w, c), float(arr))
        if arr.ndim == 1:
            if arr.shape[0] != c:
                raise ValueError(f"constant color has {arr.shape[0]} channels, target has {c}")
            return np.broadcast_to(arr, (h, w, c)).copy()
        return ImageBuffer(arr).planes().copy()


@dataclass
class ResidualFields:
    """Per-pixel misfit of each phase; nonnegative scalars, zero on exact match."""

    gF: ImageBuffer
    gB: ImageBuffer


def _check_dims(grid: LevelSetGrid, scene: SceneModel2D) -> None:
    if grid.ndim != 2:
        raise ValueError("2D compositing needs a 2D grid")
    nx, ny = grid.dims
    if (scene.target.width, scene.target.height) != (nx, ny):
        raise ValueError(
            f"target is {scene.target.width}x{scene.target.height}, grid is {nx}x{ny}")


def heaviside_plane(grid: LevelSetGrid, m: Mollifier) -> np.ndarray:
    """H(phi) in image layout (rows are y)."""
    return smoothed_heaviside(grid.values, m).T


def composite(grid: LevelSetGrid, scene: SceneModel2D, m: Mollifier) -> ImageBuffer:
    _check_dims(grid, scene)
    h_img = heaviside_plane(grid, m)[:, :, None]
    out = scene.color_plane("fg") * (1.0 - h_img) + scene.color_plane("bg") * h_img
    return ImageBuffer(out[:, :, 0] if scene.target.channels == 1 else out)


def residuals(scene: SceneModel2D) -> ResidualFields:
    target = scene.target.planes()
    diff_f = scene.color_plane("fg") - target
    diff_b = scene.color_plane("bg") - target
    if scene.loss_kind == "squared":
        gf = channel_mean(diff_f ** 2)
        gb = channel_mean(diff_b ** 2)
    else:
        gf = channel_mean(np.abs(diff_f))
        gb = channel_mean(np.abs(diff_b))
    return ResidualFields(ImageBuffer(gf), ImageBuffer(gb))


def functional_value(grid: LevelSetGrid, scene: SceneModel2D, m: Mollifier) -> float:
    """Two-phase misfit integral, in units of error times pixel area."""
    _check_dims(grid, scene)
    res = residuals(scene)
    h_img = heaviside_plane(grid, m)
    area = grid.spacing ** 2
    return float(np.sum(res.gF.data * (1.0 - h_img) + res.gB.data * h_img) * area)


@dataclass
class FittedColors:
    fg: np.ndarray
    bg: np.ndarray
    fg_updated: bool = True
    bg_updated: bool = True


def fit_colors(grid: LevelSetGrid, target: ImageBuffer, m: Mollifier,
               prev_fg=None, prev_bg=None) -> FittedColors:
    """Per-channel weighted means of the target, the optimal constant colors
    for the squared functional at fixed geometry. A phase with no weight keeps
    its previous color and is flagged as not updated."""
    if grid.ndim != 2 or (target.width, target.height) != grid.dims:
        raise ValueError("target dims must match grid dims")
    h_img = smoothed_heaviside(grid.values, m).T
    t = target.planes()
    w_fg = (1.0 - h_img).sum()
    w_bg = h_img.sum()
    out = FittedColors(fg=np.asarray(prev_fg, float) if prev_fg is not None else np.zeros(target.channels),
                       bg=np.asarray(prev_bg, float) if prev_bg is not None else np.zeros(target.channels))
    if w_fg > 1e-12:
        out.fg = (t * (1.0 - h_img)[:, :, None]).sum(axis=(0, 1)) / w_fg
    else:
        out.fg_updated = False
    if w_bg > 1e-12:
        out.bg = (t * h_img[:, :, None]).sum(axis=(0, 1)) / w_bg
    else:
        out.bg_updated = False
    return out
