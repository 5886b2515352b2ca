"""Sphere-traced rendering of 3D level-set grids.

Rays step by the sampled distance value (scaled to tolerate mild signed
distance drift) until the interpolated phi crosses zero, then bisect onto
the surface. Primary visibility, camera-depth buffers, shadow rays toward a
point light, and analytic synthetic targets (sphere, torus, holeball) live
here.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .grid import LevelSetGrid, reinitialize
from .images import ImageBuffer


@dataclass
class Camera:
    position: np.ndarray
    forward: np.ndarray
    up: np.ndarray
    right: np.ndarray
    fov_y: float
    resolution: tuple[int, int]  # (width, height)

    def __post_init__(self):
        self.position = np.asarray(self.position, float)
        for name in ("forward", "up", "right"):
            v = np.asarray(getattr(self, name), float)
            setattr(self, name, v)
        frame = np.stack([self.right, self.up, self.forward])
        if not np.allclose(frame @ frame.T, np.eye(3), atol=1e-6):
            raise ValueError("camera frame must be orthonormal")
        if not 0.0 < self.fov_y < np.pi:
            raise ValueError("fov_y must lie in (0, pi)")

    @classmethod
    def look_at(cls, position, target, fov_y, resolution, up_hint=(0.0, 0.0, 1.0)) -> "Camera":
        position = np.asarray(position, float)
        fwd = np.asarray(target, float) - position
        fwd = fwd / np.linalg.norm(fwd)
        hint = np.asarray(up_hint, float)
        if abs(fwd @ hint) > 0.999:
            hint = np.array([0.0, 1.0, 0.0])
        right = np.cross(fwd, hint)
        right /= np.linalg.norm(right)
        up = np.cross(right, fwd)
        up /= np.linalg.norm(up)
        return cls(position, fwd, up, right, float(fov_y), tuple(resolution))

    @property
    def width(self) -> int:
        return int(self.resolution[0])

    @property
    def height(self) -> int:
        return int(self.resolution[1])

    def pixel_extent(self) -> float:
        """Side of one pixel on the virtual image plane at unit depth."""
        return 2.0 * np.tan(0.5 * self.fov_y) / self.height

    def ray_directions(self) -> np.ndarray:
        w, h = self.width, self.height
        tan = np.tan(0.5 * self.fov_y)
        xs = (2.0 * (np.arange(w) + 0.5) / w - 1.0) * tan * (w / h)
        ys = (1.0 - 2.0 * (np.arange(h) + 0.5) / h) * tan
        dirs = (self.forward[None, None, :]
                + xs[None, :, None] * self.right[None, None, :]
                + ys[:, None, None] * self.up[None, None, :])
        return dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)

    def to_camera_space(self, points: np.ndarray) -> np.ndarray:
        rel = np.asarray(points, float) - self.position
        return np.stack([rel @ self.right, rel @ self.up, rel @ self.forward], axis=-1)

    def depth_of(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, float) - self.position) @ self.forward


@dataclass
class SceneModel3D:
    """Shading and background model; material and lighting are given, only the
    geometry evolves."""

    shading: str = "lambertian"  # constant | lambertian | point_light
    albedo: float | np.ndarray = 0.75
    light_dir: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    light_intensity: float = 1.0
    ambient: float = 0.0
    background: float | np.ndarray = 0.25
    cameras: list = field(default_factory=list)
    targets: list = field(default_factory=list)
    point_light: Optional[np.ndarray] = None
    floor_point: Optional[np.ndarray] = None
    floor_normal: Optional[np.ndarray] = None
    floor_albedo: float = 0.8

    def __post_init__(self):
        self.light_dir = np.asarray(self.light_dir, float)
        n = np.linalg.norm(self.light_dir)
        if n > 0:
            self.light_dir = self.light_dir / n
        if self.shading not in ("constant", "lambertian", "point_light"):
            raise ValueError(f"unknown shading model {self.shading!r}")
        if self.targets and len(self.targets) != len(self.cameras):
            raise ValueError("reference count must match camera count")

    def background_value(self) -> float:
        return float(np.mean(self.background))


@dataclass
class RenderBuffers:
    radiance: ImageBuffer
    hit_mask: np.ndarray  # (H, W) uint8
    depth: np.ndarray  # camera-forward depth, > 0 on hits
    normal: np.ndarray  # (H, W, 3)
    hit_point: np.ndarray  # (H, W, 3)
    ndotv: np.ndarray  # normal dot unit view ray


# ---- ray marching -----------------------------------------------------------


def _aabb_interval(grid: LevelSetGrid, origins, dirs):
    lo, hi = grid.aabb()
    t0 = np.full(len(origins), -np.inf)
    t1 = np.full(len(origins), np.inf)
    for a in range(3):
        d = dirs[:, a]
        o = origins[:, a]
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (lo[a] - o) / d
            tb = (hi[a] - o) / d
        near = np.minimum(ta, tb)
        far = np.maximum(ta, tb)
        parallel = np.abs(d) < 1e-14
        inside = (o >= lo[a]) & (o <= hi[a])
        near = np.where(parallel, np.where(inside, -np.inf, np.inf), near)
        far = np.where(parallel, np.where(inside, np.inf, -np.inf), far)
        t0 = np.maximum(t0, near)
        t1 = np.minimum(t1, far)
    return t0, t1


def trace_rays(grid: LevelSetGrid, origins: np.ndarray, dirs: np.ndarray,
               max_steps: int = 384, step_scale: float = 0.9,
               hit_tol: Optional[float] = None, t_start: Optional[np.ndarray] = None,
               t_max: Optional[np.ndarray] = None):
    """Batch sphere tracing. Returns (hit, t, points, normals).

    A ray is a hit when the interpolated phi at its point is within hit_tol
    (default 1e-3 * spacing); sign changes are refined by bisection, so mild
    overshoot from interpolation error is recovered.
    """
    origins = np.atleast_2d(origins).astype(float)
    dirs = np.atleast_2d(dirs).astype(float)
    n = len(dirs)
    if len(origins) == 1 and n > 1:
        origins = np.broadcast_to(origins, (n, 3)).copy()
    tol = 1e-3 * grid.spacing if hit_tol is None else hit_tol

    t0, t1 = _aabb_interval(grid, origins, dirs)
    if t_max is not None:
        t1 = np.minimum(t1, t_max)
    t = np.maximum(t0, 0.0) + 1e-6 * grid.spacing
    if t_start is not None:
        t = np.maximum(t, t_start)
    alive = t < t1

    t_prev = t.copy()
    hit = np.zeros(n, dtype=bool)
    t_hit = np.zeros(n)

    for _ in range(max_steps):
        idx = np.nonzero(alive)[0]
        if idx.size == 0:
            break
        p = origins[idx] + t[idx, None] * dirs[idx]
        d_val = grid.sample(p)

        crossed = d_val <= 0.0
        if crossed.any():
            ci = idx[crossed]
            lo_t = t_prev[ci]
            hi_t = t[ci]
            for _ in range(30):
                mid = 0.5 * (lo_t + hi_t)
                val = grid.sample(origins[ci] + mid[:, None] * dirs[ci])
                neg = val <= 0.0
                hi_t = np.where(neg, mid, hi_t)
                lo_t = np.where(neg, lo_t, mid)
            t_hit[ci] = 0.5 * (lo_t + hi_t)
            hit[ci] = True
            alive[ci] = False
        close = (d_val > 0.0) & (d_val <= tol)
        if close.any():
            si = idx[close]
            t_hit[si] = t[si]
            hit[si] = True
            alive[si] = False

        marching = ~crossed & ~close
        mi = idx[marching]
        t_prev[mi] = t[mi]
        t[mi] = t[mi] + step_scale * np.maximum(d_val[marching], tol)
        escaped = t[mi] > t1[mi]
        alive[mi[escaped]] = False

    points = origins + t_hit[:, None] * dirs
    normals = np.zeros_like(points)
    if hit.any():
        g = grid.sample_gradient(points[hit])
        normals[hit] = g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-12)
    return hit, t_hit, points, normals


def trace(grid: LevelSetGrid, camera: Camera, pixel) -> Optional[dict]:
    """Single-pixel convenience wrapper; None on miss."""
    r, c = pixel
    dirs = camera.ray_directions()[r, c][None, :]
    hit, t, pts, nrm = trace_rays(grid, camera.position[None, :], dirs)
    if not hit[0]:
        return None
    return {
        "point": pts[0],
        "normal": nrm[0],
        "depth": float(camera.depth_of(pts[0][None, :])[0]),
        "ndotv": float(nrm[0] @ dirs[0]),
    }


def shadow_ray(grid: LevelSetGrid, src, dst, offset: Optional[float] = None):
    """Occlusion test along the segment src -> dst with end offsets.

    Returns (occluded, occluder_point or None)."""
    src = np.asarray(src, float)
    dst = np.asarray(dst, float)
    seg = dst - src
    length = float(np.linalg.norm(seg))
    if length < 1e-12:
        return 0, None
    d = seg / length
    off = 2.0 * grid.spacing if offset is None else offset
    if length <= 2 * off:
        return 0, None
    hit, t_hit, pts, _ = trace_rays(grid, src[None, :], d[None, :],
                                    t_start=np.array([off]),
                                    t_max=np.array([length - off]))
    if hit[0]:
        return 1, pts[0]
    return 0, None


def shadow_rays(grid: LevelSetGrid, srcs: np.ndarray, dst,
                offset: Optional[float] = None):
    """Vectorized occlusion tests from many points toward one light position."""
    srcs = np.atleast_2d(srcs)
    dst = np.asarray(dst, float)
    seg = dst[None, :] - srcs
    lengths = np.linalg.norm(seg, axis=1)
    safe = np.maximum(lengths, 1e-12)
    dirs = seg / safe[:, None]
    off = 2.0 * grid.spacing if offset is None else offset
    hit, t_hit, pts, _ = trace_rays(grid, srcs, dirs,
                                    t_start=np.full(len(srcs), off),
                                    t_max=np.maximum(lengths - off, 0.0))
    return hit, pts


# ---- shading ----------------------------------------------------------------


def _shade_surface(scene: SceneModel3D, grid: LevelSetGrid, points, normals):
    albedo = float(np.mean(scene.albedo))
    if scene.shading == "constant":
        return np.full(len(points), albedo)
    if scene.shading == "lambertian":
        lam = np.maximum(0.0, normals @ scene.light_dir)
        return albedo * (scene.ambient + (1.0 - scene.ambient) * lam) * scene.light_intensity
    # point light with cast shadows
    light = np.asarray(scene.point_light, float)
    ldir = light[None, :] - points
    ldir /= np.maximum(np.linalg.norm(ldir, axis=1, keepdims=True), 1e-12)
    lam = np.maximum(0.0, np.sum(normals * ldir, axis=1))
    occ, _ = shadow_rays(grid, points + normals * 2.0 * grid.spacing, light)
    vis = 1.0 - occ.astype(float)
    return albedo * (scene.ambient + (1.0 - scene.ambient) * lam * vis) * scene.light_intensity


def _floor_hits(scene: SceneModel3D, origins, dirs):
    """Ray-plane intersection parameters; inf where parallel or behind."""
    p0 = np.asarray(scene.floor_point, float)
    nrm = np.asarray(scene.floor_normal, float)
    nrm = nrm / np.linalg.norm(nrm)
    denom = dirs @ nrm
    with np.errstate(divide="ignore", invalid="ignore"):
        tt = ((p0 - origins) @ nrm) / denom
    tt = np.where((np.abs(denom) < 1e-12) | (tt <= 0), np.inf, tt)
    return tt, nrm


def _shade_floor(scene: SceneModel3D, grid: LevelSetGrid, points, lit_override=None):
    nrm = np.asarray(scene.floor_normal, float)
    nrm = nrm / np.linalg.norm(nrm)
    if scene.point_light is not None:
        light = np.asarray(scene.point_light, float)
        ldir = light[None, :] - points
        ldir /= np.maximum(np.linalg.norm(ldir, axis=1, keepdims=True), 1e-12)
        lam = np.maximum(0.0, ldir @ nrm)
        if lit_override is None:
            occ, _ = shadow_rays(grid, points + nrm * 1e-3, light)
            vis = 1.0 - occ.astype(float)
        else:
            vis = lit_override
        return scene.floor_albedo * (scene.ambient + (1.0 - scene.ambient) * lam * vis)
    lam = np.maximum(0.0, scene.light_dir @ nrm)
    return np.full(len(points), scene.floor_albedo * (scene.ambient + (1.0 - scene.ambient) * lam))


def render(grid: LevelSetGrid, camera: Camera, scene: SceneModel3D,
           lit_floor: bool = False) -> RenderBuffers:
    """Render one view. With lit_floor the floor ignores cast shadows, which
    gives the unoccluded reference for background error fields."""
    h, w = camera.height, camera.width
    dirs = camera.ray_directions().reshape(-1, 3)
    origins = np.broadcast_to(camera.position, (len(dirs), 3)).copy()
    hit, t_hit, pts, nrm = trace_rays(grid, origins, dirs)

    radiance = np.full(len(dirs), float(np.mean(scene.background)))
    if scene.floor_point is not None:
        t_floor, _ = _floor_hits(scene, origins, dirs)
        floor_first = np.isfinite(t_floor) & (~hit | (t_floor < t_hit))
        if floor_first.any():
            fp = origins[floor_first] + t_floor[floor_first, None] * dirs[floor_first]
            radiance[floor_first] = _shade_floor(
                scene, grid, fp,
                lit_override=np.ones(int(floor_first.sum())) if lit_floor else None)
        hit = hit & ~floor_first

    if hit.any():
        radiance[hit] = _shade_surface(scene, grid, pts[hit], nrm[hit])

    ndotv = np.sum(nrm * dirs, axis=1)
    depth = camera.depth_of(pts)
    return RenderBuffers(
        radiance=ImageBuffer(radiance.reshape(h, w)),
        hit_mask=hit.reshape(h, w).astype(np.uint8),
        depth=np.where(hit, depth, 0.0).reshape(h, w),
        normal=nrm.reshape(h, w, 3),
        hit_point=pts.reshape(h, w, 3),
        ndotv=np.where(hit, ndotv, 0.0).reshape(h, w),
    )


def background_image(camera: Camera, scene: SceneModel3D,
                     empty_grid: Optional[LevelSetGrid] = None) -> ImageBuffer:
    """What each pixel would show with no level-set geometry present."""
    h, w = camera.height, camera.width
    dirs = camera.ray_directions().reshape(-1, 3)
    origins = np.broadcast_to(camera.position, (len(dirs), 3)).copy()
    radiance = np.full(len(dirs), float(np.mean(scene.background)))
    if scene.floor_point is not None:
        t_floor, _ = _floor_hits(scene, origins, dirs)
        on_floor = np.isfinite(t_floor)
        if on_floor.any():
            fp = origins[on_floor] + t_floor[on_floor, None] * dirs[on_floor]
            radiance[on_floor] = _shade_floor(scene, None, fp,
                                              lit_override=np.ones(int(on_floor.sum())))
    return ImageBuffer(radiance.reshape(h, w))


# ---- synthetic targets --------------------------------------------------------


def sphere_sdf(center, radius):
    c = np.asarray(center, float)

    def fn(pts):
        return np.linalg.norm(pts - c, axis=-1) - radius

    return fn


def torus_sdf(center, major, minor, axis=2):
    c = np.asarray(center, float)
    ring = [i for i in range(3) if i != axis]

    def fn(pts):
        rel = pts - c
        q = np.hypot(np.linalg.norm(rel[..., ring], axis=-1) - major, rel[..., axis])
        return q - minor

    return fn


def holeball_sdf(center, radius, hole_radius):
    """Sphere with three orthogonal axis-aligned cylinders removed."""
    c = np.asarray(center, float)

    def fn(pts):
        rel = pts - c
        d = np.linalg.norm(rel, axis=-1) - radius
        for axis in range(3):
            other = [i for i in range(3) if i != axis]
            cyl = np.linalg.norm(rel[..., other], axis=-1) - hole_radius
            d = np.maximum(d, -cyl)
        return d

    return fn


def make_target(shape: str, dims, spacing: float = 1.0, origin=None,
                **params) -> LevelSetGrid:
    """Sample an analytic target SDF onto a grid.

    CSG results (holeball) are re-distanced so |grad phi| is close to one
    before rendering.
    """
    dims = tuple(dims)
    center = params.get("center", tuple(0.5 * spacing * (d - 1) for d in dims))
    if shape == "sphere":
        fn = sphere_sdf(center, params["radius"])
        needs_reinit = False
    elif shape == "torus":
        fn = torus_sdf(center, params["major"], params["minor"], params.get("axis", 2))
        needs_reinit = False
    elif shape == "holeball":
        fn = holeball_sdf(center, params["radius"], params["hole_radius"])
        needs_reinit = True
    else:
        raise ValueError(f"unknown target shape {shape!r}")
    grid = LevelSetGrid.from_sdf(fn, dims, spacing, origin)
    if needs_reinit:
        grid = reinitialize(grid, params.get("reinit_iters", 30))
    return grid


def orbit_cameras(center, distance, view_specs, fov_y, resolution) -> list[Camera]:
    """Cameras looking at center from (azimuth_deg, elevation_deg) pairs."""
    cams = []
    c = np.asarray(center, float)
    for az_deg, el_deg in view_specs:
        az = np.radians(az_deg)
        el = np.radians(el_deg)
        offset = np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        cams.append(Camera.look_at(c + distance * offset, c, fov_y, resolution))
    return cams


# ---- camera file I/O -----------------------------------------------------------


def save_cameras(cameras: list[Camera], path) -> None:
    """One camera per line: position, forward, up, fov_y, width, height."""
    with open(path, "w") as f:
        f.write("# px py pz fx fy fz ux uy uz fov_y width height\n")
        for cam in cameras:
            nums = [*cam.position, *cam.forward, *cam.up, cam.fov_y]
            f.write(" ".join(f"{v:.9g}" for v in nums)
                    + f" {cam.width} {cam.height}\n")


def load_cameras(path) -> list[Camera]:
    cams = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tok = line.split()
            if len(tok) != 12:
                raise ValueError(f"camera line needs 12 fields, got {len(tok)}")
            vals = [float(t) for t in tok]
            pos, fwd, up = np.array(vals[0:3]), np.array(vals[3:6]), np.array(vals[6:9])
            fwd /= np.linalg.norm(fwd)
            up -= (up @ fwd) * fwd
            up /= np.linalg.norm(up)
            right = np.cross(up, fwd)
            right /= np.linalg.norm(right)
            cams.append(Camera(pos, fwd, up, right, vals[9], (int(tok[10]), int(tok[11]))))
    return cams
