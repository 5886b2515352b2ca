"""Uniform-grid level-set representation and finite-difference operators.

The level-set function phi is sampled at grid nodes; node (i, j[, k]) sits at
world position ``origin + index * spacing``. Sign convention: phi <= 0 is the
interior (foreground), phi > 0 the exterior.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np


@dataclass
class LevelSetGrid:
    """Scalar field on a uniform axis-aligned grid (2D or 3D).

    values is indexed [ix, iy] in 2D and [ix, iy, iz] in 3D, axis 0 being x.
    """

    values: np.ndarray
    spacing: float
    origin: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim not in (2, 3):
            raise ValueError(f"grid must be 2D or 3D, got {self.values.ndim} axes")
        if any(n < 4 for n in self.values.shape):
            raise ValueError(f"grid dims must each be >= 4, got {self.values.shape}")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        if self.origin is None:
            self.origin = np.zeros(self.values.ndim)
        self.origin = np.asarray(self.origin, dtype=np.float64)
        if self.origin.shape != (self.values.ndim,):
            raise ValueError("origin length must match grid dimensionality")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def dims(self) -> tuple[int, ...]:
        return self.values.shape

    def copy(self) -> "LevelSetGrid":
        return LevelSetGrid(self.values.copy(), self.spacing, self.origin.copy())

    def axis_coords(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.spacing * np.arange(self.dims[axis])

    def node_positions(self) -> np.ndarray:
        """World coordinates of every node, shape dims + (ndim,)."""
        axes = [self.axis_coords(a) for a in range(self.ndim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        lo = self.origin.copy()
        hi = self.origin + self.spacing * (np.array(self.dims) - 1)
        return lo, hi

    @classmethod
    def from_sdf(cls, fn, dims, spacing: float, origin=None) -> "LevelSetGrid":
        """Sample a callable sdf(points) -> distances onto a fresh grid."""
        origin = np.zeros(len(dims)) if origin is None else np.asarray(origin, float)
        g = cls(np.zeros(tuple(dims)), spacing, origin)
        pts = g.node_positions().reshape(-1, len(dims))
        g.values = np.asarray(fn(pts), dtype=np.float64).reshape(tuple(dims))
        return g

    # ---- interpolation ----------------------------------------------------

    def _cell_fractions(self, points: np.ndarray):
        p = (np.asarray(points, dtype=np.float64) - self.origin) / self.spacing
        hi = np.array(self.dims, dtype=np.float64) - 1.0
        p = np.clip(p, 0.0, hi - 1e-9)
        i0 = np.floor(p).astype(np.intp)
        i0 = np.minimum(i0, (np.array(self.dims) - 2))
        f = p - i0
        return i0, f

    def sample(self, points: np.ndarray) -> np.ndarray:
        """Multilinear interpolation of phi at world points, clamped to the box."""
        pts = np.atleast_2d(points)
        i0, f = self._cell_fractions(pts)
        v = self.values
        if self.ndim == 2:
            x, y = i0[:, 0], i0[:, 1]
            fx, fy = f[:, 0], f[:, 1]
            out = (v[x, y] * (1 - fx) * (1 - fy)
                   + v[x + 1, y] * fx * (1 - fy)
                   + v[x, y + 1] * (1 - fx) * fy
                   + v[x + 1, y + 1] * fx * fy)
        else:
            x, y, z = i0[:, 0], i0[:, 1], i0[:, 2]
            fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
            c00 = v[x, y, z] * (1 - fx) + v[x + 1, y, z] * fx
            c10 = v[x, y + 1, z] * (1 - fx) + v[x + 1, y + 1, z] * fx
            c01 = v[x, y, z + 1] * (1 - fx) + v[x + 1, y, z + 1] * fx
            c11 = v[x, y + 1, z + 1] * (1 - fx) + v[x + 1, y + 1, z + 1] * fx
            c0 = c00 * (1 - fy) + c10 * fy
            c1 = c01 * (1 - fy) + c11 * fy
            out = c0 * (1 - fz) + c1 * fz
        return out if np.asarray(points).ndim > 1 else out[0]

    def sample_gradient(self, points: np.ndarray) -> np.ndarray:
        """Analytic gradient of the multilinear interpolant at world points."""
        pts = np.atleast_2d(points)
        i0, f = self._cell_fractions(pts)
        v = self.values
        h = self.spacing
        if self.ndim == 2:
            x, y = i0[:, 0], i0[:, 1]
            fx, fy = f[:, 0], f[:, 1]
            v00, v10 = v[x, y], v[x + 1, y]
            v01, v11 = v[x, y + 1], v[x + 1, y + 1]
            gx = ((v10 - v00) * (1 - fy) + (v11 - v01) * fy) / h
            gy = ((v01 - v00) * (1 - fx) + (v11 - v10) * fx) / h
            out = np.stack([gx, gy], axis=-1)
        else:
            x, y, z = i0[:, 0], i0[:, 1], i0[:, 2]
            fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
            c = [[[v[x + a, y + b, z + c_] for c_ in (0, 1)] for b in (0, 1)] for a in (0, 1)]
            gx = ((c[1][0][0] - c[0][0][0]) * (1 - fy) * (1 - fz)
                  + (c[1][1][0] - c[0][1][0]) * fy * (1 - fz)
                  + (c[1][0][1] - c[0][0][1]) * (1 - fy) * fz
                  + (c[1][1][1] - c[0][1][1]) * fy * fz) / h
            gy = ((c[0][1][0] - c[0][0][0]) * (1 - fx) * (1 - fz)
                  + (c[1][1][0] - c[1][0][0]) * fx * (1 - fz)
                  + (c[0][1][1] - c[0][0][1]) * (1 - fx) * fz
                  + (c[1][1][1] - c[1][0][1]) * fx * fz) / h
            gz = ((c[0][0][1] - c[0][0][0]) * (1 - fx) * (1 - fy)
                  + (c[1][0][1] - c[1][0][0]) * fx * (1 - fy)
                  + (c[0][1][1] - c[0][1][0]) * (1 - fx) * fy
                  + (c[1][1][1] - c[1][1][0]) * fx * fy) / h
            out = np.stack([gx, gy, gz], axis=-1)
        return out if np.asarray(points).ndim > 1 else out[0]


# ---- finite differences ----------------------------------------------------


def _one_sided(values: np.ndarray, h: float, axis: int):
    """Backward and forward differences; the missing side at the boundary is
    mirrored from the available one so affine fields stay exact everywhere."""
    dm = np.empty_like(values)
    dp = np.empty_like(values)
    sl_all = [slice(None)] * values.ndim

    def sl(a, b):
        s = list(sl_all)
        s[axis] = slice(a, b)
        return tuple(s)

    diff = np.diff(values, axis=axis) / h
    dm[sl(1, None)] = diff
    dp[sl(None, -1)] = diff
    dm[sl(0, 1)] = dp[sl(0, 1)]
    dp[sl(-1, None)] = dm[sl(-1, None)]
    return dm, dp


def gradient_field(grid: LevelSetGrid) -> np.ndarray:
    """Central-difference gradient of phi, shape dims + (ndim,)."""
    grads = np.gradient(grid.values, grid.spacing, edge_order=2)
    return np.stack(grads, axis=-1)


def gradient_central(grid: LevelSetGrid, node) -> np.ndarray:
    return gradient_field(grid)[tuple(node)]


def grad_norm_upwind_field(grid: LevelSetGrid, speed_sign: np.ndarray) -> np.ndarray:
    """Godunov upwind |grad phi| for the transport phi_t = speed * |grad phi|.

    Branch selection per node: for positive speed the scheme takes the larger
    of max(D+, 0) and -min(D-, 0) per axis, which picks the entropy branch at
    kinks (shocks use the steep side, rarefactions flatten to zero).
    """
    v = grid.values
    h = grid.spacing
    sign = np.asarray(speed_sign)
    pos = sign >= 0
    total = np.zeros_like(v)
    for axis in range(v.ndim):
        dm, dp = _one_sided(v, h, axis)
        g_pos = np.maximum(np.maximum(dp, 0.0) ** 2, np.minimum(dm, 0.0) ** 2)
        g_neg = np.maximum(np.minimum(dp, 0.0) ** 2, np.maximum(dm, 0.0) ** 2)
        total += np.where(pos, g_pos, g_neg)
    return np.sqrt(total)


def grad_norm_upwind(grid: LevelSetGrid, node, speed_sign: int) -> float:
    sign = np.full(grid.dims, speed_sign, dtype=np.float64)
    return float(grad_norm_upwind_field(grid, sign)[tuple(node)])


def curvature_field(grid: LevelSetGrid, grad_floor: float = 1e-6) -> np.ndarray:
    """div(grad phi / |grad phi|), the sum of principal curvatures in 3D.

    Nodes with |grad phi| below grad_floor are treated as flat (kappa = 0).
    """
    g = gradient_field(grid)
    norm = np.sqrt(np.sum(g * g, axis=-1))
    ok = norm >= grad_floor
    safe = np.where(ok, norm, 1.0)
    n = g / safe[..., None]
    kappa = np.zeros_like(grid.values)
    for axis in range(grid.ndim):
        kappa += np.gradient(n[..., axis], grid.spacing, axis=axis, edge_order=2)
    kappa[~ok] = 0.0
    return kappa


def curvature(grid: LevelSetGrid, node) -> float:
    return float(curvature_field(grid)[tuple(node)])


# ---- reinitialization -------------------------------------------------------


def reinitialize(grid: LevelSetGrid, iters: int, dt_factor: float = 0.5) -> LevelSetGrid:
    """Restore the signed-distance property without moving the zero set.

    Relaxes phi_t = sign(phi0) (1 - |grad phi|) with Godunov upwinding away
    from the interface. Nodes adjacent to a sign change are instead relaxed
    toward a subcell distance estimate phi0 / |grad phi0|, which pins the zero
    crossing (and makes the whole operation invariant to scaling of phi0).
    """
    if iters <= 0:
        return grid.copy()
    phi0 = grid.values
    h = grid.spacing

    inside = phi0 <= 0.0
    interface = np.zeros(grid.dims, dtype=bool)
    for axis in range(grid.ndim):
        flip = inside != np.roll(inside, 1, axis=axis)
        sl = [slice(None)] * grid.ndim
        sl[axis] = slice(1, None)
        interface[tuple(sl)] |= flip[tuple(sl)]
        sl[axis] = slice(None, -1)
        shifted = np.roll(flip, -1, axis=axis)
        interface[tuple(sl)] |= shifted[tuple(sl)]

    g0 = gradient_field(grid)
    norm0 = np.sqrt(np.sum(g0 * g0, axis=-1))
    target = phi0 / np.maximum(norm0, 1e-12)
    target = np.clip(target, -2.0 * h, 2.0 * h)

    smeared = phi0 / np.sqrt(phi0 * phi0 + h * h)
    sgn0 = np.where(phi0 > 0.0, 1.0, np.where(phi0 < 0.0, -1.0, 0.0))
    dtau = dt_factor * h

    phi = phi0.copy()
    work = LevelSetGrid(phi, h, grid.origin)
    for _ in range(iters):
        norm = grad_norm_upwind_field(work, -smeared)
        update = dtau * smeared * (1.0 - norm)
        fix = -dtau / h * (sgn0 * np.abs(phi) - target)
        phi += np.where(interface, fix, update)
    return LevelSetGrid(phi, h, grid.origin.copy())


# ---- serialization ----------------------------------------------------------

_MAGIC = b"LSG1"


def save_grid(grid: LevelSetGrid, path) -> None:
    """Flat little-endian dump: magic, axis count, dims, spacing, origin, phi."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", grid.ndim))
        f.write(struct.pack(f"<{grid.ndim}I", *grid.dims))
        f.write(struct.pack("<d", grid.spacing))
        f.write(struct.pack(f"<{grid.ndim}d", *grid.origin))
        f.write(grid.values.astype("<f8").tobytes(order="C"))


def load_grid(path) -> LevelSetGrid:
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a level-set grid file")
        (ndim,) = struct.unpack("<I", f.read(4))
        dims = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
        (spacing,) = struct.unpack("<d", f.read(8))
        origin = np.array(struct.unpack(f"<{ndim}d", f.read(8 * ndim)))
        count = int(np.prod(dims))
        values = np.frombuffer(f.read(8 * count), dtype="<f8").reshape(dims)
    return LevelSetGrid(values.copy(), spacing, origin)
