"""Multi-view 3D evolution: shading and silhouette terms, the conic-carve
topological derivative, velocity extension, and the reconstruction loops.

All speeds follow the same orientation as the 2D side: positive speed raises
phi (material is removed). At a visible point y (camera space, z along the
view axis) the carve sensitivity is

    td(y) = (g(y) - g_B(y)) * kappa(y) * (y.y) / y_z^3

with g the current surface misfit, g_B the misfit the background would have,
and kappa the mean curvature. The independent oracle carves a thin cone from
the camera apex through an eps-circle at y and measures the change of the
image functional per unit circle area.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .grid import LevelSetGrid, curvature_field, grad_norm_upwind_field, gradient_field, reinitialize
from .images import ImageBuffer
from .mesh import chamfer_distance, extract_mesh, genus
from .mollify import Mollifier, smoothed_delta
from .render3d import Camera, RenderBuffers, SceneModel3D, background_image, render, shadow_rays


@dataclass
class Evolve3DConfig:
    dt_cfl: float = 0.25
    max_iters: int = 300
    reinit_every: int = 10
    reinit_iters: int = 15
    lambda_sd: float = 1.0
    lambda_td: float = 0.5
    sil_eps: float = 0.1  # silhouette delta width on n.view, dimensionless
    band_cells: float = 3.0  # velocity extension reach around the surface
    stop_tol: float | None = 1e-4  # None disables the plateau stop
    plateau_window: int = 15
    use_shading: bool = True
    # carve mode applies the TD only where the background fits better; the raw
    # signed formula would also push the surface outward wherever the
    # foreground already fits, inflating the shape against every camera at
    # once.
    td_carve_only: bool = True
    # carving reveals background, so it is restricted to pixels whose
    # reference is actually background-like (g_B below this tolerance);
    # without the gate any shading mismatch with g > g_B keeps punching pits
    # through the surface long after the true holes are open.
    td_bg_tol: float = 1e-4
    # carve only at transversal hits: a grazing ray's contact point slides
    # along the surface, and carving there digs a trench along the ray that
    # can thread spurious handles under a barely-misaligned shell. The conic
    # perturbation is constructed around a transversal piercing anyway.
    td_graze_cos: float = 0.2
    # curvature floor (1/world units) for the carve drive: a digging dent
    # turns concave at its bottom, and without the floor the curvature factor
    # quenches the carve before breakthrough. The raw sensitivity formula is
    # unaffected; set 0 to disable.
    td_kappa_floor: float = 0.0
    kappa_clamp: float = 1.0  # |kappa| ceiling, in units of 1/spacing
    # cap the carve samples at this percentile of their positive values
    # before the CFL step. A few hot carve samples otherwise consume the
    # whole CFL budget and every front crawls; the carve field is background
    # gated (no noise pixels), so flattening its range is a per-point
    # positive rescale that keeps each sample in its own descent direction.
    # The signed shading/silhouette terms are never capped. 100 disables.
    td_cap_percentile: float = 100.0
    log_mesh_every: int = 10

    def __post_init__(self):
        if not 0.0 < self.dt_cfl <= 1.0:
            raise ValueError("dt_cfl must lie in (0, 1]")


@dataclass
class SpeedGrid3D:
    values: np.ndarray
    weight: np.ndarray


@dataclass
class ViewTerms:
    """Per-hit derivative samples for one camera."""

    points: np.ndarray  # (N, 3) world
    shading: np.ndarray  # (N,)
    visibility: np.ndarray  # (N,)
    td: np.ndarray  # (N,)
    view_id: int = 0


def mean_curvature_grid(grid: LevelSetGrid, clamp: float) -> LevelSetGrid:
    """Half the divergence of the unit normal, clamped, as a sampleable grid."""
    kappa = 0.5 * curvature_field(grid)
    bound = clamp / grid.spacing
    return LevelSetGrid(np.clip(kappa, -bound, bound), grid.spacing, grid.origin)


def _channel_sq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a - b
    return d * d if d.ndim == 2 else (d * d).mean(axis=2)


def _channel_diff(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a - b
    return d if d.ndim == 2 else d.mean(axis=2)


def shading_term(buffers: RenderBuffers, signed_residual: np.ndarray,
                 camera: Camera) -> np.ndarray:
    """Screen-space estimate of -grad g . x / x_z^3 on interior hit pixels.

    The residual gradient is taken with central differences in pixel units and
    mapped to world units through the pixel footprint at the hit depth. Pixels
    whose 4-neighborhood crosses the silhouette are zeroed: the residual jump
    across a depth discontinuity is not a surface gradient.
    """
    hit = buffers.hit_mask.astype(bool)
    r = np.where(hit, signed_residual, 0.0)
    interior = hit.copy()
    for axis, shift in ((0, 1), (0, -1), (1, 1), (1, -1)):
        interior &= np.roll(hit, shift, axis=axis)
    interior[0, :] = interior[-1, :] = False
    interior[:, 0] = interior[:, -1] = False

    dg_col = 0.5 * (np.roll(r, -1, axis=1) - np.roll(r, 1, axis=1))  # screen x
    dg_row = 0.5 * (np.roll(r, -1, axis=0) - np.roll(r, 1, axis=0))  # screen y, downward

    depth = np.maximum(buffers.depth, 1e-9)
    pix = camera.pixel_extent() * depth  # pixel footprint in world units
    grad_right = dg_col / pix
    grad_up = -dg_row / pix

    x_cam = camera.to_camera_space(buffers.hit_point.reshape(-1, 3)).reshape(
        buffers.hit_point.shape)
    dot = grad_right * x_cam[..., 0] + grad_up * x_cam[..., 1]
    term = -dot / depth ** 3
    return np.where(interior, term, 0.0)


def visibility_term(buffers: RenderBuffers, g: np.ndarray, g_b: np.ndarray,
                    camera: Camera, kappa_grid: LevelSetGrid,
                    sil_eps: float) -> np.ndarray:
    """Silhouette term (g - g_B) kappa x.x / x_z^3 delta(n.view); the smoothed
    delta confines it to grazing hits. Pixels whose rendering already matches
    the reference exactly (g = 0) exert no force, so a perfect fit is a true
    fixed point of the evolution."""
    hit = buffers.hit_mask.astype(bool)
    delta = smoothed_delta(buffers.ndotv, Mollifier(sil_eps))
    kappa = kappa_grid.sample(buffers.hit_point.reshape(-1, 3)).reshape(hit.shape)
    x_cam = camera.to_camera_space(buffers.hit_point.reshape(-1, 3)).reshape(
        buffers.hit_point.shape)
    xtx = np.sum(x_cam * x_cam, axis=-1)
    depth = np.maximum(buffers.depth, 1e-9)
    term = (g - g_b) * kappa * xtx / depth ** 3 * delta * (g > 0.0)
    return np.where(hit, term, 0.0)


def topological_derivative_3d(buffers: RenderBuffers, g: np.ndarray, g_b: np.ndarray,
                              camera: Camera, kappa_grid: LevelSetGrid) -> np.ndarray:
    """Conic-perturbation sensitivity on the entire visible surface."""
    hit = buffers.hit_mask.astype(bool)
    kappa = kappa_grid.sample(buffers.hit_point.reshape(-1, 3)).reshape(hit.shape)
    x_cam = camera.to_camera_space(buffers.hit_point.reshape(-1, 3)).reshape(
        buffers.hit_point.shape)
    xtx = np.sum(x_cam * x_cam, axis=-1)
    depth = np.maximum(buffers.depth, 1e-9)
    term = (g - g_b) * kappa * xtx / depth ** 3
    return np.where(hit, term, 0.0)


def view_terms(grid: LevelSetGrid, camera: Camera, reference: ImageBuffer,
               scene: SceneModel3D, cfg: Evolve3DConfig,
               kappa_grid: LevelSetGrid, view_id: int = 0) -> tuple[ViewTerms, float]:
    """Render one view and assemble its per-hit derivative samples plus the
    view's contribution to the image functional."""
    buf = render(grid, camera, scene)
    ref = reference.data
    cur = buf.radiance.data
    du = camera.pixel_extent() ** 2
    i_view = float(np.sum(_channel_sq(cur, ref)) * du)

    hit = buf.hit_mask.astype(bool)
    g = np.where(hit, _channel_sq(cur, ref), 0.0)
    bg = background_image(camera, scene).data
    g_b = _channel_sq(bg, ref)

    sh = shading_term(buf, _channel_diff(cur, ref), camera) if cfg.use_shading else np.zeros_like(g)
    vis = visibility_term(buf, g, g_b, camera, kappa_grid, cfg.sil_eps)
    td = topological_derivative_3d(buf, g, g_b, camera, kappa_grid)
    if cfg.td_carve_only:
        kappa = kappa_grid.sample(buf.hit_point.reshape(-1, 3)).reshape(hit.shape)
        carve = (np.maximum(g - g_b, 0.0) * np.maximum(kappa, cfg.td_kappa_floor)
                 * (g_b <= cfg.td_bg_tol)
                 * (np.abs(buf.ndotv) >= cfg.td_graze_cos))
        x_cam = camera.to_camera_space(buf.hit_point.reshape(-1, 3)).reshape(
            buf.hit_point.shape)
        xtx = np.sum(x_cam * x_cam, axis=-1)
        td = np.where(hit, carve * xtx / np.maximum(buf.depth, 1e-9) ** 3, 0.0)

    terms = ViewTerms(points=buf.hit_point[hit],
                      shading=sh[hit],
                      visibility=vis[hit],
                      td=td[hit],
                      view_id=view_id)
    return terms, i_view


def combined_speeds(terms: ViewTerms, cfg: Evolve3DConfig) -> np.ndarray:
    return cfg.lambda_sd * (terms.shading + terms.visibility) + cfg.lambda_td * terms.td


def splat_and_extend(points: np.ndarray, speeds: np.ndarray, grid: LevelSetGrid,
                     band_cells: float = 3.0) -> SpeedGrid3D:
    """Trilinear scatter of surface samples, then constant extension along the
    normal within the |phi| <= band_cells * spacing band; zero elsewhere."""
    acc_v = np.zeros(grid.dims)
    acc_w = np.zeros(grid.dims)
    if len(points):
        if not (np.all(np.isfinite(points)) and np.all(np.isfinite(speeds))):
            raise ValueError("surface samples must be finite")
        i0, f = grid._cell_fractions(points)
        for corner in range(8):
            off = np.array([(corner >> a) & 1 for a in range(3)])
            w = np.ones(len(points))
            for a in range(3):
                w = w * (f[:, a] if off[a] else 1.0 - f[:, a])
            idx = tuple(i0[:, a] + off[a] for a in range(3))
            np.add.at(acc_v, idx, w * speeds)
            np.add.at(acc_w, idx, w)

    has = acc_w > 1e-12
    avg = np.where(has, acc_v / np.maximum(acc_w, 1e-12), 0.0)

    band = np.abs(grid.values) <= band_cells * grid.spacing
    values = np.zeros(grid.dims)
    if band.any() and has.any():
        pos = grid.node_positions()[band]
        grads = gradient_field(grid)[band]
        norms = np.maximum(np.linalg.norm(grads, axis=1), 1e-12)
        normals = grads / norms[:, None]
        surf = pos - grid.values[band][:, None] * normals
        num_grid = LevelSetGrid(np.where(has, avg, 0.0), grid.spacing, grid.origin)
        den_grid = LevelSetGrid(has.astype(float), grid.spacing, grid.origin)
        num = num_grid.sample(surf)
        den = den_grid.sample(surf)
        vals = np.where(den > 1e-6, num / np.maximum(den, 1e-6), 0.0)
        values[band] = vals
    return SpeedGrid3D(values=values, weight=acc_w)


def prune_small_features(grid: LevelSetGrid, min_cells: int = 8) -> LevelSetGrid:
    """Remove interior islands and enclosed voids below the representable
    feature size.

    Sub-voxel islands are invisible to ray sampling (the interpolated phi a
    ray sees may never dip negative), so no view can ever supply a speed to
    erode them; enclosed voids cannot render at all. Both are grid noise, not
    geometry.
    """
    from scipy import ndimage

    v = grid.values.copy()
    h = grid.spacing
    inside = v <= 0.0
    labels, count = ndimage.label(inside)
    if count > 1:
        sizes = np.bincount(labels.ravel())
        for lab in range(1, count + 1):
            if sizes[lab] < min_cells:
                v[labels == lab] = 0.5 * h
    outside = v > 0.0
    labels, count = ndimage.label(outside)
    if count > 1:
        border = np.unique(np.concatenate([
            labels[0, :, :].ravel(), labels[-1, :, :].ravel(),
            labels[:, 0, :].ravel(), labels[:, -1, :].ravel(),
            labels[:, :, 0].ravel(), labels[:, :, -1].ravel()]))
        sizes = np.bincount(labels.ravel())
        for lab in range(1, count + 1):
            if lab not in border and sizes[lab] < min_cells:
                v[labels == lab] = -0.5 * h
    return LevelSetGrid(v, h, grid.origin.copy())


def step3d(grid: LevelSetGrid, speed: SpeedGrid3D, cfg: Evolve3DConfig) -> LevelSetGrid:
    """Upwind transport step; positive speed retreats the surface (carves)."""
    s = speed.values
    if not np.all(np.isfinite(s)):
        raise ValueError("speed grid must be finite")
    smax = float(np.max(np.abs(s)))
    if smax == 0.0:
        return grid.copy()
    dt = cfg.dt_cfl * grid.spacing / smax
    norm = grad_norm_upwind_field(grid, s)
    return LevelSetGrid(grid.values + dt * s * norm, grid.spacing, grid.origin.copy())


def secondary_td(x, x_prime, g: float, g_b: float, kappa: float,
                 z_dir=None) -> float:
    """Carve sensitivity at an occluder point x' on the light path through x.

    The frame's z axis runs from the shading point toward the light; a
    grazing secondary segment ((x'-x)_z below 1e-6) is rejected.
    """
    x = np.asarray(x, float)
    xp = np.asarray(x_prime, float)
    rel = xp - x
    if z_dir is None:
        n = np.linalg.norm(rel)
        if n < 1e-12:
            raise ValueError("occluder coincides with the shading point")
        z = n
    else:
        z = float(rel @ (np.asarray(z_dir, float)))
    if abs(z) < 1e-6:
        raise ValueError("grazing secondary ray: (x'-x)_z is degenerate")
    return float((g - g_b) * kappa * (rel @ rel) / z ** 3)


# ---- carve oracle ---------------------------------------------------------------


def cone_carve_values(grid: LevelSetGrid, apex, center, normal, eps: float) -> np.ndarray:
    """phi with the apex cone through the eps-circle at center removed.

    The pseudo-distance to the cone wall is measured in the homothety through
    the apex (exact on the circle's plane, conservative nearby), scaled down so
    sphere tracing of the carved field stays safe.
    """
    apex = np.asarray(apex, float)
    center = np.asarray(center, float)
    n = np.asarray(normal, float)
    n = n / np.linalg.norm(n)
    lo, hi = grid.aabb()
    if np.any(center - eps < lo) or np.any(center + eps > hi):
        raise ValueError("carve circle leaves the grid bounds")

    pos = grid.node_positions().reshape(-1, 3)
    v = pos - apex
    vn = v @ n
    cn = (center - apex) @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        s = cn / vn
    valid = (vn * np.sign(cn) > 1e-12) & (s > 1e-6)
    q = apex + s[:, None] * v
    radial = np.linalg.norm(q - center, axis=1)
    with np.errstate(invalid="ignore"):
        dist = (radial - eps) / np.maximum(s, 1e-6)
    cone_sdf = np.where(valid, 0.8 * dist, np.abs(eps) + grid.spacing)
    return np.maximum(grid.values, -cone_sdf.reshape(grid.dims))


def td_numeric_oracle(grid: LevelSetGrid, camera: Camera, scene: SceneModel3D,
                      reference: ImageBuffer, y: np.ndarray, normal: np.ndarray,
                      eps_list) -> tuple[float, list[float]]:
    """Finite-size carve estimates of the conic sensitivity at surface point y.

    For each eps the cone from the camera apex through the eps-circle at y is
    removed, the view re-rendered, and the drop of the image functional
    divided by the circle area pi eps^2. The eps -> 0 limit is read off a
    linear fit in eps. Returns (extrapolated value, per-eps quotients).
    """
    eps_list = sorted(float(e) for e in eps_list)
    du = camera.pixel_extent() ** 2

    def functional(g: LevelSetGrid) -> float:
        buf = render(g, camera, scene)
        return float(np.sum(_channel_sq(buf.radiance.data, reference.data)) * du)

    base = functional(grid)
    quotients = []
    for eps in eps_list:
        carved = LevelSetGrid(
            cone_carve_values(grid, camera.position, y, normal, eps),
            grid.spacing, grid.origin)
        quotients.append((base - functional(carved)) / (np.pi * eps ** 2))
    coeffs = np.polyfit(np.asarray(eps_list), np.asarray(quotients), 1)
    return float(coeffs[1]), quotients


def constant_curvature_probe(grid: LevelSetGrid, camera: Camera,
                             sil_band: float = 0.12, max_points: int = 400):
    """Compare x . grad(n.x) (finite differences on the grid) against
    kappa_mean x.x at near-silhouette hits; the substitution driving the
    conic sensitivity is exact on the apparent contour."""
    buf = render(grid, camera, SceneModel3D(shading="constant"))
    hit = buf.hit_mask.astype(bool)
    sel = hit & (np.abs(buf.ndotv) < sil_band) & (np.abs(buf.ndotv) > 1e-4)
    pts = buf.hit_point[sel]
    if len(pts) > max_points:
        pts = pts[np.linspace(0, len(pts) - 1, max_points).astype(int)]
    grads = gradient_field(grid)
    norms = np.maximum(np.linalg.norm(grads, axis=-1), 1e-12)
    nfield = grads / norms[..., None]
    rel_nodes = grid.node_positions() - camera.position
    f_vals = np.sum(nfield * rel_nodes, axis=-1)
    f_grid = LevelSetGrid(f_vals, grid.spacing, grid.origin)
    grad_f = f_grid.sample_gradient(pts)
    x_rel = pts - camera.position
    lhs = np.sum(x_rel * grad_f, axis=1)
    kappa = mean_curvature_grid(grid, clamp=10.0).sample(pts)
    rhs = kappa * np.sum(x_rel * x_rel, axis=1)
    return lhs, rhs


# ---- optimization loops -----------------------------------------------------------


@dataclass
class History3DRow:
    iteration: int
    functional: float
    genus: int
    chamfer: float
    dt: float
    reinit: bool


def write_history3d_csv(rows, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iter", "I", "genus", "chamfer", "dt", "reinit"])
        for r in rows:
            cham = f"{r.chamfer:.6g}" if np.isfinite(r.chamfer) else ""
            w.writerow([r.iteration, f"{r.functional:.12g}", r.genus, cham,
                        f"{r.dt:.12g}", int(r.reinit)])


def optimize3d(init_grid: LevelSetGrid, scene: SceneModel3D, cfg: Evolve3DConfig,
               target_points: Optional[np.ndarray] = None,
               snapshot_callback=None):
    """Multi-view reconstruction loop. Returns (final grid, history rows)."""
    if len(scene.cameras) < 1 or len(scene.targets) != len(scene.cameras):
        raise ValueError("scene needs cameras with matching reference images")
    grid = init_grid.copy()
    history: list[History3DRow] = []
    i_values: list[float] = []
    last_genus = 0
    last_chamfer = float("inf")

    for it in range(cfg.max_iters):
        kappa_grid = mean_curvature_grid(grid, cfg.kappa_clamp)
        pts_all, sd_all, td_all = [], [], []
        i_total = 0.0
        for k, (cam, ref) in enumerate(zip(scene.cameras, scene.targets)):
            terms, i_view = view_terms(grid, cam, ref, scene, cfg, kappa_grid, view_id=k)
            i_total += i_view
            if len(terms.points):
                pts_all.append(terms.points)
                sd_all.append(terms.shading + terms.visibility)
                td_all.append(terms.td)
        points = np.concatenate(pts_all) if pts_all else np.zeros((0, 3))
        sd_part = np.concatenate(sd_all) if sd_all else np.zeros(0)
        td_part = np.concatenate(td_all) if td_all else np.zeros(0)
        if cfg.td_cap_percentile < 100.0 and len(td_part):
            pos = td_part[td_part > 0.0]
            if len(pos):
                cap = np.percentile(pos, cfg.td_cap_percentile)
                td_part = np.clip(td_part, None, cap)
        speeds = cfg.lambda_sd * sd_part + cfg.lambda_td * td_part

        speed_grid = splat_and_extend(points, speeds, grid, cfg.band_cells)
        smax = float(np.max(np.abs(speed_grid.values)))
        dt = cfg.dt_cfl * grid.spacing / smax if smax > 0 else 0.0
        grid = step3d(grid, speed_grid, cfg)

        did_reinit = cfg.reinit_every > 0 and (it + 1) % cfg.reinit_every == 0
        if did_reinit:
            grid = prune_small_features(reinitialize(grid, cfg.reinit_iters))

        if cfg.log_mesh_every > 0 and it % cfg.log_mesh_every == 0:
            mesh = extract_mesh(grid)
            last_genus = genus(mesh)
            if target_points is not None and not mesh.empty:
                last_chamfer = chamfer_distance(mesh.vertices, target_points)
        history.append(History3DRow(it, i_total, last_genus, last_chamfer, dt, did_reinit))
        i_values.append(i_total)
        if snapshot_callback is not None:
            snapshot_callback(it, grid)

        if cfg.stop_tol is not None and len(i_values) > cfg.plateau_window:
            past = i_values[-cfg.plateau_window - 1]
            if (past - i_total) / max(abs(past), 1e-30) < cfg.stop_tol:
                break
    return grid, history


def shadow_region_error(grid: LevelSetGrid, scene: SceneModel3D, camera: Camera,
                        reference: ImageBuffer, region: np.ndarray) -> float:
    buf = render(grid, camera, scene)
    err = _channel_sq(buf.radiance.data, reference.data)
    return float(err[region].sum())


def optimize_shadow(init_grid: LevelSetGrid, scene: SceneModel3D, camera: Camera,
                    reference: ImageBuffer, cfg: Evolve3DConfig):
    """Drill the occluder along blocked light paths so cast shadows match the
    reference. Speeds come from the secondary-visibility carve sensitivity at
    the first occluder of each shadow ray; returns (grid, history, region).

    The monitored region is the set of floor pixels shadowed at start.
    """
    if scene.point_light is None or scene.floor_point is None:
        raise ValueError("shadow optimization needs a point light and a floor")
    grid = init_grid.copy()
    light = np.asarray(scene.point_light, float)
    h, w = camera.height, camera.width
    dirs = camera.ray_directions().reshape(-1, 3)
    origins = np.broadcast_to(camera.position, (len(dirs), 3)).copy()

    from .render3d import _floor_hits  # same geometry as the renderer

    t_floor, floor_n = _floor_hits(scene, origins, dirs)
    floor_mask = np.isfinite(t_floor)
    fp = origins[floor_mask] + t_floor[floor_mask, None] * dirs[floor_mask]
    lift = fp + floor_n * (2.0 * grid.spacing)

    occ0, _ = shadow_rays(grid, lift, light)
    region = np.zeros(len(dirs), dtype=bool)
    region[np.nonzero(floor_mask)[0][occ0]] = True
    region2d = region.reshape(h, w)

    ref = reference
    history = []
    err0 = shadow_region_error(grid, scene, camera, ref, region2d)
    for it in range(cfg.max_iters):
        kappa_grid = mean_curvature_grid(grid, cfg.kappa_clamp)
        occ, occ_pts = shadow_rays(grid, lift, light)
        if not occ.any():
            history.append((it, shadow_region_error(grid, scene, camera, ref, region2d)))
            break
        buf = render(grid, camera, scene)
        err = _channel_sq(buf.radiance.data, ref.data).reshape(-1)
        lit = background_image(camera, scene).data.reshape(-1)
        err_lit = _channel_sq(lit.reshape(h, w), ref.data).reshape(-1)

        pix = np.nonzero(floor_mask)[0][occ]
        xs = fp[occ]
        xps = occ_pts[occ]
        zdir = light[None, :] - xs
        zdir /= np.maximum(np.linalg.norm(zdir, axis=1, keepdims=True), 1e-12)
        rel = xps - xs
        z = np.sum(rel * zdir, axis=1)
        ok = np.abs(z) > 1e-6
        # the drill front turns concave, so the same curvature floor as the
        # primary carve keeps it advancing
        kappa = np.maximum(kappa_grid.sample(xps), cfg.td_kappa_floor)
        g = err[pix]
        g_b = err_lit[pix]
        td = np.where(ok, np.maximum(g - g_b, 0.0) * (g_b <= cfg.td_bg_tol)
                      * kappa * np.sum(rel * rel, axis=1)
                      / np.where(ok, z, 1.0) ** 3, 0.0)
        td = td * cfg.lambda_td

        speed_grid = splat_and_extend(xps[ok], td[ok], grid, cfg.band_cells)
        grid = step3d(grid, speed_grid, cfg)
        if cfg.reinit_every > 0 and (it + 1) % cfg.reinit_every == 0:
            grid = reinitialize(grid, cfg.reinit_iters)
        history.append((it, shadow_region_error(grid, scene, camera, ref, region2d)))
    return grid, history, region2d, err0
