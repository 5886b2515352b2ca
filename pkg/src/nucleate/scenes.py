"""Canned synthetic scenes shared by the CLI, demos, and the acceptance runs.

All scenes are generated in-process so runs are self-contained and
deterministic. The multi-view rigs use a dark background with an ambient
shading floor, keeping every foreground radiance separable from the
background; the carve sensitivity relies on that separation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .evolve2d import EvolutionConfig
from .evolve3d import Evolve3DConfig
from .grid import LevelSetGrid
from .images import ImageBuffer
from .mollify import Mollifier
from .render3d import (
    Camera,
    SceneModel3D,
    make_target,
    orbit_cameras,
    render,
    sphere_sdf,
)
from .scene2d import SceneModel2D, composite


# ---- 2D -------------------------------------------------------------------


def circle(center, radius):
    c = np.asarray(center, float)
    return lambda pts: np.linalg.norm(pts - c, axis=-1) - radius


def box(lo, hi):
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


def annulus(center, outer, inner):
    def fn(pts):
        return np.maximum(circle(center, outer)(pts), -circle(center, inner)(pts))

    return fn


def raster_target(sdf, n: int, fg: float, bg: float, eps_cells: float) -> ImageBuffer:
    """Anti-aliased raster of an analytic region, like a real pipeline emits."""
    grid = LevelSetGrid.from_sdf(sdf, (n, n), 1.0)
    probe = SceneModel2D(fg, bg, ImageBuffer(np.zeros((n, n))))
    return composite(grid, probe, Mollifier(eps_cells))


@dataclass
class Recovery2D:
    init_grid: LevelSetGrid
    scene: SceneModel2D
    cfg: EvolutionConfig
    target_mask: np.ndarray  # grid-layout foreground truth


def annulus_recovery(n: int = 256, band_only: bool = False,
                     max_iters: int = 600) -> Recovery2D:
    """Disk initialization against an annulus raster: the inner hole can only
    appear through nucleation."""
    c = ((n - 1) / 2.0, (n - 1) / 2.0)
    outer, inner = 0.39 * n, 0.176 * n
    fg, bg = 0.0, 1.0
    eps = 1.0
    target = raster_target(annulus(c, outer, inner), n, fg, bg, eps)
    init = LevelSetGrid.from_sdf(circle(c, 0.234 * n), (n, n), 1.0)
    cfg = EvolutionConfig(dt_cfl=0.45, max_iters=max_iters, reinit_every=10,
                          eps_h=eps, stop_tol=1e-5, band_only=band_only)
    pos = init.node_positions()
    mask = annulus(c, outer, inner)(pos) <= 0
    return Recovery2D(init, SceneModel2D(fg, bg, target), cfg, mask)


def square_recovery(n: int = 256, band_only: bool = False,
                    max_iters: int = 600) -> Recovery2D:
    """Small off-center disk against a distant square: recovery requires a new
    phase far from the initialization."""
    fg, bg = 0.0, 1.0
    eps = 1.0
    lo, hi = (0.39 * n, 0.39 * n), (0.86 * n, 0.86 * n)
    target = raster_target(box(lo, hi), n, fg, bg, eps)
    init = LevelSetGrid.from_sdf(circle((0.195 * n, 0.195 * n), 0.098 * n), (n, n), 1.0)
    cfg = EvolutionConfig(dt_cfl=0.45, max_iters=max_iters, reinit_every=10,
                          eps_h=eps, stop_tol=1e-5, band_only=band_only)
    pos = init.node_positions()
    mask = box(lo, hi)(pos) <= 0
    return Recovery2D(init, SceneModel2D(fg, bg, target), cfg, mask)


def iou(grid: LevelSetGrid, mask: np.ndarray) -> float:
    fg = grid.values <= 0
    union = np.logical_or(fg, mask).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(fg, mask).sum() / union)


# ---- 3D multi-view rigs -----------------------------------------------------


TORUS_VIEWS = [(0, 90), (0, -90), (0, 15), (120, 15), (240, 15),
               (60, 60), (180, -60), (300, 60)]

HOLEBALL_VIEWS = [(0, 0), (90, 0), (180, 0), (270, 0), (0, 90), (0, -90),
                  (30, 35), (150, 35), (270, 35), (90, -35), (210, -35), (330, -35)]


@dataclass
class Recovery3D:
    name: str
    init_grid: LevelSetGrid
    target_grid: LevelSetGrid
    scene: SceneModel3D
    cfg: Evolve3DConfig


def _rig(target_grid: LevelSetGrid, center, distance, view_specs, render_res):
    cams = orbit_cameras(center, distance, view_specs, np.radians(60),
                         (render_res, render_res))
    scene = SceneModel3D(shading="lambertian", albedo=0.75,
                         light_dir=(0.35, 0.45, 0.82), ambient=0.25,
                         background=0.02, cameras=cams, targets=[])
    scene.targets = [render(target_grid, cam, scene).radiance for cam in cams]
    return scene


def torus_recovery(n: int = 64, render_res: int = 96, max_iters: int = 1100,
                   lambda_td: float = 0.5, views=None) -> Recovery3D:
    center = np.full(3, (n - 1) / 2.0)
    major, minor = 0.27 * n, 0.088 * n
    r_init = 0.375 * n
    target = make_target("torus", (n, n, n), center=center, major=major, minor=minor)
    init = make_target("sphere", (n, n, n), center=center, radius=r_init)
    scene = _rig(target, center, 0.953 * n, views or TORUS_VIEWS, render_res)
    cfg = Evolve3DConfig(max_iters=max_iters, stop_tol=2e-5, plateau_window=40,
                         sil_eps=0.2, td_kappa_floor=1.0 / r_init,
                         reinit_iters=10, band_cells=2.0, lambda_td=lambda_td)
    return Recovery3D("torus", init, target, scene, cfg)


def holeball_recovery(n: int = 96, render_res: int = 96, max_iters: int = 1200,
                      lambda_td: float = 0.5, views=None) -> Recovery3D:
    center = np.full(3, (n - 1) / 2.0)
    radius, hole = 0.3125 * n, 0.104 * n
    target = make_target("holeball", (n, n, n), center=center, radius=radius,
                         hole_radius=hole)
    init = make_target("sphere", (n, n, n), center=center, radius=0.375 * n)
    scene = _rig(target, center, 0.833 * n, views or HOLEBALL_VIEWS, render_res)
    cfg = Evolve3DConfig(max_iters=max_iters, stop_tol=2e-5, plateau_window=40,
                         sil_eps=0.2, td_kappa_floor=1.0 / (0.375 * n),
                         reinit_iters=10, band_cells=2.0, lambda_td=lambda_td)
    return Recovery3D("holeball", init, target, scene, cfg)


def axis_rays_open(grid: LevelSetGrid, center=None) -> list[bool]:
    """Whether the three axis-aligned centerline rays pass without touching
    the shape (sampled min of phi along each line stays positive)."""
    if center is None:
        lo, hi = grid.aabb()
        center = 0.5 * (lo + hi)
    center = np.asarray(center, float)
    lo, hi = grid.aabb()
    out = []
    for axis in range(3):
        ts = np.linspace(lo[axis], hi[axis], 4 * grid.dims[axis])
        pts = np.tile(center, (len(ts), 1))
        pts[:, axis] = ts
        out.append(bool(grid.sample(pts).min() > 0.0))
    return out


# ---- shadow scene -----------------------------------------------------------


@dataclass
class ShadowSetup:
    init_grid: LevelSetGrid
    target_grid: LevelSetGrid
    scene: SceneModel3D
    camera: Camera
    reference: ImageBuffer
    cfg: Evolve3DConfig


def shadow_setup(n: int = 64, render_res: int = 96, max_iters: int = 50) -> ShadowSetup:
    """Plane receiver, point light above, sphere occluder. The reference was
    rendered with a cylindrical channel drilled along the light axis, so a
    matching hole must be carved to let the light through."""
    h = 1.0
    c = (n - 1) / 2.0
    sphere_c = np.array([c, c, 0.47 * n])
    radius = 0.1875 * n
    light = np.array([c, c, 0.92 * n])
    floor_z = 0.09 * n
    hole_r = 0.078 * n

    def occluder(pts):
        return sphere_sdf(sphere_c, radius)(pts)

    def drilled(pts):
        cyl = np.linalg.norm(pts[..., :2] - np.array([c, c]), axis=-1) - hole_r
        return np.maximum(occluder(pts), -cyl)

    init = LevelSetGrid.from_sdf(occluder, (n, n, n), h)
    target = LevelSetGrid.from_sdf(drilled, (n, n, n), h)

    cam = Camera.look_at((c, -0.55 * n, 0.86 * n), (c, c, floor_z + 2.0),
                         np.radians(55), (render_res, render_res))
    scene = SceneModel3D(shading="point_light", albedo=0.3, ambient=0.15,
                         background=0.0, point_light=light,
                         floor_point=np.array([c, c, floor_z]),
                         floor_normal=np.array([0.0, 0.0, 1.0]),
                         floor_albedo=0.85)
    reference = render(target, cam, scene).radiance
    # the drill advances ~0.6 h per step, and nodes deeper than the extension
    # band only come into reach after a reinitialization, so the cadence must
    # keep up with the front
    cfg = Evolve3DConfig(dt_cfl=0.6, max_iters=max_iters, reinit_every=5,
                         reinit_iters=10, lambda_td=1.0, band_cells=3.0,
                         td_kappa_floor=1.0 / radius, stop_tol=None)
    return ShadowSetup(init, target, scene, cam, reference, cfg)


# ---- carve-oracle probe scene (3D) ------------------------------------------


@dataclass
class OracleScene3D:
    grid: LevelSetGrid
    camera: Camera
    scene: SceneModel3D
    reference: ImageBuffer
    probes: list  # (probe point, normal) pairs on the calibration ring
    radius: float


def td_oracle_scene(n: int = 64, render_res: int = 128,
                    azimuths: int = 8) -> OracleScene3D:
    """Sphere against a brighter constant background at camera distance 1.5 R.

    At that distance the tangent-plane substitution behind the conic formula
    is exact on the ring n_z = -(D^2 + 2R^2)/(3DR), which is where the probe
    points sit.
    """
    center = np.full(3, (n - 1) / 2.0)
    radius = 0.25 * n
    distance = 1.5 * radius
    grid = make_target("sphere", (n, n, n), center=center, radius=radius)
    cam = Camera.look_at(center - np.array([0.0, distance, 0.0]), center,
                         np.radians(100), (render_res, render_res))
    scene = SceneModel3D(shading="constant", albedo=0.2, background=0.8)
    reference = ImageBuffer(np.full((render_res, render_res), 0.8))

    nz = -(distance ** 2 + 2 * radius ** 2) / (3 * distance * radius)
    ring = np.sqrt(1.0 - nz * nz)
    probes = []
    for theta in np.linspace(0.0, 2 * np.pi, azimuths, endpoint=False):
        normal = np.array([ring * np.cos(theta), nz, ring * np.sin(theta)])
        probes.append((center + radius * normal, normal))
    return OracleScene3D(grid, cam, scene, reference, probes, radius)


def select_ring_pixels(buffers, camera: Camera, probes, radius: float) -> list:
    """Snap each analytic ring probe to the hit pixel where the tangent-plane
    substitution factor kappa |y|^2 / |n.y| is closest to one. Uses only the
    analytic curvature 1/R and traced geometry, never the oracle values."""
    hit = buffers.hit_mask.astype(bool)
    pts = buffers.hit_point.reshape(-1, 3)
    h, w = buffers.hit_mask.shape
    out = []
    for probe, _ in probes:
        idx = int(np.argmin(np.linalg.norm(pts - probe[None, :], axis=1)))
        r0, c0 = divmod(idx, w)
        best = None
        for r in range(max(r0 - 3, 0), min(r0 + 4, h)):
            for c in range(max(c0 - 3, 0), min(c0 + 4, w)):
                if not hit[r, c]:
                    continue
                y = buffers.hit_point[r, c] - camera.position
                n = buffers.normal[r, c]
                ny = abs(float(n @ y))
                if ny < 1e-9:
                    continue
                mismatch = abs((y @ y) / (radius * ny) - 1.0)
                if best is None or mismatch < best[0]:
                    best = (mismatch, r, c)
        if best is not None:
            out.append((best[1], best[2]))
    return out
