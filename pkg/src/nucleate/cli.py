"""Batch command-line front end.

Subcommands: vectorize (raster to SVG), recon3d (multi-view reconstruction),
check (derivative-versus-oracle self checks), demo (canned qualitative runs).
Exit codes: 0 success, 1 input error, 2 ran out of iterations without
converging.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .contours import count_topology, extract_contours, topology_counts_grid
from .evolve2d import EvolutionConfig, carve_oracle, gateaux_pair, optimize2d, write_history_csv
from .evolve3d import (
    Evolve3DConfig,
    mean_curvature_grid,
    optimize3d,
    optimize_shadow,
    td_numeric_oracle,
    topological_derivative_3d,
    write_history3d_csv,
)
from .grid import LevelSetGrid, curvature, reinitialize
from .images import ImageBuffer, read_png, write_png
from .mesh import chamfer_distance, extract_mesh, genus, save_obj
from .mollify import Mollifier, smoothed_delta
from .render3d import load_cameras, make_target, render, save_cameras
from .scene2d import SceneModel2D, composite, functional_value, residuals
from .scenes import (
    annulus_recovery,
    box,
    circle,
    holeball_recovery,
    iou,
    axis_rays_open,
    raster_target,
    select_ring_pixels,
    shadow_setup,
    square_recovery,
    td_oracle_scene,
    torus_recovery,
)
from .vectorize import build_document, rasterize_document, save_svg


def _write_manifest(out_dir: Path, command: str, params: dict, outputs: list) -> None:
    canon = json.dumps(params, sort_keys=True, default=str)
    manifest = {
        "command": command,
        "params": params,
        "config_hash": hashlib.sha256(canon.encode()).hexdigest(),
        "outputs": [str(o) for o in outputs],
        "versions": {"nucleate": __version__, "numpy": np.__version__},
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=str)


def _converged(history, cfg) -> bool:
    return len(history) < cfg.max_iters


# ---- vectorize ---------------------------------------------------------------


def cmd_vectorize(args) -> int:
    in_path = Path(args.input)
    if not in_path.exists():
        print(f"error: input image not found: {in_path}", file=sys.stderr)
        return 1
    try:
        target = read_png(in_path)
    except Exception as exc:
        print(f"error: cannot read {in_path}: {exc}", file=sys.stderr)
        return 1

    n_x, n_y = target.width, target.height
    if n_x < 4 or n_y < 4:
        print("error: image too small", file=sys.stderr)
        return 1
    out_path = Path(args.out)
    out_dir = out_path.parent if out_path.parent != Path("") else Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)

    c = ((n_x - 1) / 2.0, (n_y - 1) / 2.0)
    if args.init == "disk":
        sdf = circle(c, 0.35 * min(n_x, n_y))
    else:
        half = 0.35 * min(n_x, n_y)
        sdf = box((c[0] - half, c[1] - half), (c[0] + half, c[1] + half))
    init = LevelSetGrid.from_sdf(sdf, (n_x, n_y), 1.0)

    scene = SceneModel2D(np.zeros(target.channels), np.ones(target.channels), target)
    cfg = EvolutionConfig(max_iters=args.max_iters, eps_h=args.eps,
                          color_refit_every=args.color_refit_every,
                          stop_tol=args.stop_tol, dt_cfl=args.dt_cfl,
                          band_only=args.sd_only)
    m = cfg.mollifier(1.0)

    frames_dir = Path(args.frames_dir) if args.frames_dir else None
    if frames_dir:
        frames_dir.mkdir(parents=True, exist_ok=True)

    def on_frame(it, grid, sc):
        if frames_dir and it % args.frame_every == 0:
            write_png(composite(grid, sc, m), frames_dir / f"frame_{it:05d}.png")

    final, history = optimize2d(init, scene, cfg,
                                frame_callback=on_frame if frames_dir else None)

    fit_fg = np.atleast_1d(scene.fg_color)
    fit_bg = np.atleast_1d(scene.bg_color)
    if cfg.color_refit_every:
        from .scene2d import fit_colors
        fit = fit_colors(final, target, m, prev_fg=fit_fg, prev_bg=fit_bg)
        fit_fg, fit_bg = fit.fg, fit.bg
    doc = build_document(final, (fit_fg, fit_bg), tol=args.simplify_tol)
    save_svg(doc, out_path)
    history_path = out_dir / args.history
    write_history_csv(history, history_path)

    comps, holes = topology_counts_grid(final)
    outputs = [out_path, history_path]
    _write_manifest(out_dir, "vectorize", vars(args), outputs)
    final_i = history[-1].functional if history else 0.0
    print(f"vectorize: iters={len(history)} I={final_i:.6g} topology=({comps},{holes}) "
          f"paths={len(doc.loops)} -> {out_path}")
    if args.max_iters > 0 and not _converged(history, cfg):
        return 2
    return 0


# ---- recon3d -----------------------------------------------------------------


def cmd_recon3d(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.synthetic:
        if args.synthetic == "torus":
            setup = torus_recovery(n=args.grid, render_res=args.render_res,
                                   max_iters=args.max_iters, lambda_td=args.lambda_td)
        elif args.synthetic == "holeball":
            setup = holeball_recovery(n=args.grid, render_res=args.render_res,
                                      max_iters=args.max_iters, lambda_td=args.lambda_td)
        else:
            print(f"error: unknown synthetic shape {args.synthetic!r}", file=sys.stderr)
            return 1
        if args.views and args.views != len(setup.scene.cameras):
            print(f"error: the {args.synthetic} rig defines "
                  f"{len(setup.scene.cameras)} views", file=sys.stderr)
            return 1
        init, scene, cfg = setup.init_grid, setup.scene, setup.cfg
        target_mesh = extract_mesh(setup.target_grid)
        target_points = target_mesh.vertices if not target_mesh.empty else None
        save_cameras(scene.cameras, out_dir / "cameras.txt")
        for i, ref in enumerate(scene.targets):
            write_png(ref, out_dir / f"reference_{i:02d}.png")
    else:
        if not args.cameras or not args.references:
            print("error: need --synthetic, or --cameras with --references",
                  file=sys.stderr)
            return 1
        try:
            cameras = load_cameras(args.cameras)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        ref_paths = sorted(Path(args.references).glob("*.png"))
        if len(ref_paths) != len(cameras):
            print(f"error: {len(cameras)} cameras but {len(ref_paths)} references",
                  file=sys.stderr)
            return 1
        refs = [read_png(p) for p in ref_paths]
        from .render3d import SceneModel3D
        n = args.grid
        center = np.full(3, (n - 1) / 2.0)
        scene = SceneModel3D(shading="lambertian", albedo=0.75,
                             light_dir=(0.35, 0.45, 0.82), ambient=0.25,
                             background=0.02, cameras=cameras, targets=refs)
        init = make_target("sphere", (n, n, n), center=center, radius=0.375 * n)
        cfg = Evolve3DConfig(max_iters=args.max_iters, lambda_td=args.lambda_td,
                             sil_eps=0.2, td_kappa_floor=1.0 / (0.375 * n),
                             reinit_iters=10, band_cells=2.0)
        target_points = None

    mesh_dir = out_dir / "meshes"
    mesh_dir.mkdir(exist_ok=True)

    def snapshot(it, grid):
        if args.mesh_every > 0 and it % args.mesh_every == 0:
            mesh = extract_mesh(grid)
            if not mesh.empty:
                save_obj(mesh, mesh_dir / f"mesh_{it:05d}.obj")

    final, history = optimize3d(init, scene, cfg, target_points=target_points,
                                snapshot_callback=snapshot if args.mesh_every else None)
    mesh = extract_mesh(final)
    if not mesh.empty:
        save_obj(mesh, out_dir / "final.obj")
    write_history3d_csv(history, out_dir / "metrics.csv")
    outputs = [out_dir / "final.obj", out_dir / "metrics.csv"]
    _write_manifest(out_dir, "recon3d", vars(args), outputs)

    g = genus(mesh)
    final_i = history[-1].functional if history else float("nan")
    print(f"recon3d: iters={len(history)} genus={g} I={final_i:.6g}")
    return 0


# ---- check -------------------------------------------------------------------


def _check_mollifier(seed: int):
    m = Mollifier(1.5)
    eps = m.eps_h
    t = np.arange(-eps, eps + eps / 200, eps / 100)
    quad = float(np.trapezoid(smoothed_delta(t, m), t))
    yield ("mollifier_quadrature", abs(quad - 1.0), 1e-3)
    sym = float(np.max(np.abs(smoothed_delta(t, m) - smoothed_delta(-t, m))))
    yield ("mollifier_symmetry", sym, 1e-12)


def _check_curvature(seed: int):
    g2 = LevelSetGrid.from_sdf(circle((32, 32), 10.0), (64, 64), 1.0)
    k2 = curvature(g2, (42, 32))
    yield ("curvature_circle_2d", abs(k2 - 0.1) / 0.1, 0.05)
    g3 = LevelSetGrid.from_sdf(circle((16, 16, 16), 8.0), (32, 32, 32), 1.0)
    k3 = curvature(g3, (24, 16, 16))
    yield ("curvature_sphere_3d", abs(k3 - 0.25) / 0.25, 0.05)


def _check_reinit(seed: int):
    g = LevelSetGrid.from_sdf(circle((32, 32), 12.0), (64, 64), 1.0)
    before = extract_contours(g)
    scaled = LevelSetGrid(g.values * 5.0, 1.0)
    out = reinitialize(scaled, 50)
    after = extract_contours(out)
    worst = 0.0
    b = before.loops[0]
    b2 = np.roll(b, -1, axis=0)
    for p in after.loops[0]:
        d = b2 - b
        ln = np.sum(d * d, axis=1)
        tt = np.clip(np.sum((p - b) * d, axis=1) / np.maximum(ln, 1e-30), 0, 1)
        proj = b + tt[:, None] * d
        worst = max(worst, float(np.linalg.norm(proj - p, axis=1).min()))
    yield ("reinit_zero_set_drift", worst, 0.5)


def _gateaux_scene(n: int):
    target = raster_target(box((0.3 * n, 0.3 * n), (0.75 * n, 0.69 * n)), n, 0.2, 0.8, 1.5)
    grid = LevelSetGrid.from_sdf(circle(((n - 1) / 2, (n - 1) / 2), 0.22 * n), (n, n), 1.0)
    return grid, SceneModel2D(0.2, 0.8, target)


def _check_gateaux(seed: int, n: int = 128, trials: int = 20):
    rng = np.random.default_rng(seed)
    grid, scene = _gateaux_scene(n)
    m = Mollifier(1.5)
    worst = 0.0
    for _ in range(trials):
        psi = rng.standard_normal((n, n))
        for _ in range(8):
            psi = (psi + np.roll(psi, 1, 0) + np.roll(psi, -1, 0)
                   + np.roll(psi, 1, 1) + np.roll(psi, -1, 1)) / 5.0
        psi /= np.max(np.abs(psi))
        fd, analytic = gateaux_pair(grid, scene, m, psi, s=1e-3)
        worst = max(worst, abs(fd - analytic) / max(abs(analytic), 1e-12))
    yield ("gateaux_2d_rel_err", worst, 1e-2)


def _check_td2d(seed: int, n: int = 128):
    c = (n / 2.0, n / 2.0)
    radius = 0.23 * n

    def boxes(pts):
        return np.minimum(box((0.27 * n, 0.27 * n), (0.46 * n, 0.46 * n))(pts),
                          box((0.73 * n, 0.73 * n), (0.95 * n, 0.95 * n))(pts))

    target = raster_target(boxes, n, 0.2, 0.8, 1.5)
    grid = LevelSetGrid.from_sdf(circle(c, radius), (n, n), 1.0)
    scene = SceneModel2D(0.2, 0.8, target)
    m = Mollifier(1.5)
    res = residuals(scene)
    diff = (res.gF.data - res.gB.data).T
    probes = [(int(0.36 * n), int(0.36 * n)), (int(0.64 * n), int(0.6 * n)),
              (int(0.5 * n), int(0.63 * n)), (int(0.55 * n), int(0.37 * n)),
              (int(0.84 * n), int(0.84 * n)), (int(0.88 * n), int(0.78 * n)),
              (int(0.84 * n), int(0.2 * n)), (int(0.16 * n), int(0.84 * n)),
              (int(0.08 * n), int(0.08 * n)), (int(0.5 * n), int(0.08 * n))]
    worst = 0.0
    for p in probes:
        expected = diff[p]
        got = carve_oracle(grid, scene, m, p, [4.0, 3.0, 2.0])
        worst = max(worst, abs(got - expected) / max(abs(expected), 1e-12))
    yield ("td_carve_2d_rel_err", worst, 0.10)


def _check_td3d(seed: int, n: int = 64, render_res: int = 128):
    setup = td_oracle_scene(n=n, render_res=render_res, azimuths=8)
    kappa_grid = mean_curvature_grid(setup.grid, 1.0)
    buf = render(setup.grid, setup.camera, setup.scene)
    g = np.where(buf.hit_mask > 0,
                 (setup.scene.albedo - 0.8) ** 2 * np.ones_like(buf.depth), 0.0)
    g_b = np.zeros_like(g)
    td_field = topological_derivative_3d(buf, g, g_b, setup.camera, kappa_grid)
    errs = []
    for r, c in select_ring_pixels(buf, setup.camera, setup.probes, setup.radius):
        formula = td_field[r, c]
        oracle, _ = td_numeric_oracle(setup.grid, setup.camera, setup.scene,
                                      setup.reference, buf.hit_point[r, c],
                                      buf.normal[r, c], [4.0, 3.0, 2.0])
        errs.append(abs(oracle - formula) / max(abs(formula), 1e-12))
    if len(errs) < 5:
        yield ("td_carve_3d_probes", float(len(errs)), -5.0)
    else:
        yield ("td_carve_3d_rel_err", float(np.max(errs)), 0.15)


CHECK_SUITES = {
    "mollifier": _check_mollifier,
    "curvature": _check_curvature,
    "reinit": _check_reinit,
    "gateaux2d": _check_gateaux,
    "td2d": _check_td2d,
    "td3d": _check_td3d,
}


def cmd_check(args) -> int:
    names = [args.only] if args.only else list(CHECK_SUITES)
    unknown = [nm for nm in names if nm not in CHECK_SUITES]
    if unknown:
        print(f"error: unknown suite {unknown[0]!r}; choices: {', '.join(CHECK_SUITES)}",
              file=sys.stderr)
        return 1
    rows = []
    ok = True
    for nm in names:
        for label, measured, tol in CHECK_SUITES[nm](args.seed):
            if tol < 0:  # measured must be at least -tol (count checks)
                passed = measured >= -tol
            else:
                passed = measured <= tol
            ok &= passed
            rows.append((label, measured, tol, passed))
    width = max(len(r[0]) for r in rows) + 2
    print(f"{'check':<{width}}{'measured':>14}{'tolerance':>14}  status")
    for label, measured, tol, passed in rows:
        print(f"{label:<{width}}{measured:>14.6g}{abs(tol):>14.6g}  "
              f"{'pass' if passed else 'FAIL'}")
    return 0 if ok else 1


# ---- demo --------------------------------------------------------------------


def _demo_2d(which: str, out_dir: Path) -> dict:
    maker = annulus_recovery if which == "teaser2d-b" else square_recovery
    n = 160
    metrics = {}
    for tag, band_only in (("td", False), ("sd_only", True)):
        setup = maker(n=n, band_only=band_only, max_iters=400)
        m = setup.cfg.mollifier(1.0)
        write_png(composite(setup.init_grid, setup.scene, m), out_dir / f"{tag}_before.png")
        final, history = optimize2d(setup.init_grid, setup.scene, setup.cfg)
        write_png(composite(final, setup.scene, m), out_dir / f"{tag}_after.png")
        comps, holes = count_topology(extract_contours(final))
        metrics[tag] = {
            "iters": len(history),
            "final_I": history[-1].functional,
            "initial_I": history[0].functional,
            "topology": [comps, holes],
            "iou": iou(final, setup.target_mask),
        }
    return metrics


def _demo_shadow(out_dir: Path) -> dict:
    setup = shadow_setup(n=48, render_res=96, max_iters=50)
    write_png(render(setup.init_grid, setup.camera, setup.scene).radiance,
              out_dir / "shadow_before.png")
    write_png(setup.reference, out_dir / "shadow_reference.png")
    final, history, region, err0 = optimize_shadow(
        setup.init_grid, setup.scene, setup.camera, setup.reference, setup.cfg)
    write_png(render(final, setup.camera, setup.scene).radiance,
              out_dir / "shadow_after.png")
    err_end = history[-1][1]
    return {
        "steps": len(history),
        "shadow_error_initial": err0,
        "shadow_error_final": err_end,
        "reduction": 1.0 - err_end / max(err0, 1e-30),
    }


def cmd_demo(args) -> int:
    known = ("teaser2d-a", "teaser2d-b", "shadow")
    if args.name not in known:
        print(f"error: unknown demo {args.name!r}; choices: {', '.join(known)}",
              file=sys.stderr)
        return 1
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.name == "shadow":
        metrics = _demo_shadow(out_dir)
    else:
        metrics = _demo_2d(args.name, out_dir)
    with open(out_dir / "metrics.json", "w") as f:
        json.dump(metrics, f, indent=2, sort_keys=True)
    _write_manifest(out_dir, f"demo:{args.name}", vars(args), [out_dir / "metrics.json"])
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


# ---- run-config files ----------------------------------------------------------


def load_run_config(path) -> dict:
    """key = value lines; '#' starts a comment; values parse as int, float,
    or stay strings."""
    out = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, val = (part.strip() for part in line.split("=", 1))
            for cast in (int, float):
                try:
                    val = cast(val)
                    break
                except ValueError:
                    continue
            out[key.replace("-", "_")] = val
    return out


def _apply_config_file(args, parser) -> None:
    """File values fill in for any flag the user left at its default."""
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            parser.error(f"config file not found: {path}")
        sub = parser._command_parsers[args.command]
        defaults = load_run_config(path)
        for key, val in defaults.items():
            if hasattr(args, key) and sub.get_default(key) == getattr(args, key):
                setattr(args, key, val)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nucleate",
                                description="Level-set shape optimization with "
                                            "hole and phase nucleation")
    p.add_argument("--threads", type=int, default=0,
                   help="worker cap (advisory; kernels are vectorized)")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("vectorize", help="trace a raster image into an SVG")
    v.add_argument("--input", required=True, help="target PNG")
    v.add_argument("--out", required=True, help="output SVG path")
    v.add_argument("--init", choices=("disk", "box"), default="disk")
    v.add_argument("--max-iters", type=int, default=500)
    v.add_argument("--eps", type=float, default=1.0, help="mollifier width in cells")
    v.add_argument("--dt-cfl", type=float, default=0.45)
    v.add_argument("--stop-tol", type=float, default=1e-5)
    v.add_argument("--color-refit-every", type=int, default=5)
    v.add_argument("--simplify-tol", type=float, default=0.4)
    v.add_argument("--sd-only", action="store_true",
                   help="boundary-band speeds only (no nucleation)")
    v.add_argument("--history", default="history.csv")
    v.add_argument("--frames-dir", default=None)
    v.add_argument("--frame-every", type=int, default=10)
    v.add_argument("--config", default=None, help="key=value defaults file")
    v.set_defaults(func=cmd_vectorize)

    r = sub.add_parser("recon3d", help="multi-view 3D reconstruction")
    r.add_argument("--synthetic", choices=("torus", "holeball"), default=None)
    r.add_argument("--cameras", default=None, help="camera description file")
    r.add_argument("--references", default=None, help="directory of reference PNGs")
    r.add_argument("--views", type=int, default=0, help="expected view count")
    r.add_argument("--grid", type=int, default=64)
    r.add_argument("--render-res", type=int, default=96)
    r.add_argument("--max-iters", type=int, default=1100)
    r.add_argument("--lambda-td", type=float, default=0.5)
    r.add_argument("--mesh-every", type=int, default=0,
                   help="OBJ snapshot cadence (0 disables)")
    r.add_argument("--out-dir", default="recon_out")
    r.add_argument("--config", default=None)
    r.set_defaults(func=cmd_recon3d)

    c = sub.add_parser("check", help="derivative-versus-oracle self checks")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--only", default=None, help=f"one of: {', '.join(CHECK_SUITES)}")
    c.set_defaults(func=cmd_check)

    d = sub.add_parser("demo", help="canned qualitative demos")
    d.add_argument("name", help="teaser2d-a | teaser2d-b | shadow")
    d.add_argument("--out-dir", default="demo_out")
    d.set_defaults(func=cmd_demo)

    p._command_parsers = {"vectorize": v, "recon3d": r, "check": c, "demo": d}
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_config_file(args, parser)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
