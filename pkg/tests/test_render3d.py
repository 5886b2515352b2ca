from __future__ import annotations

import numpy as np
import pytest

from nucleate.grid import LevelSetGrid
from nucleate.images import ImageBuffer
from nucleate.render3d import (
    Camera,
    SceneModel3D,
    background_image,
    holeball_sdf,
    load_cameras,
    make_target,
    orbit_cameras,
    render,
    save_cameras,
    shadow_ray,
    sphere_sdf,
    trace,
    trace_rays,
)


CENTER = np.array([24.0, 24.0, 24.0])


def sphere_grid(radius=10.0, n=48):
    return make_target("sphere", (n, n, n), center=CENTER, radius=radius)


def front_camera(n_pix=64, distance=20.0, fov=np.radians(60)):
    pos = CENTER - np.array([0.0, distance, 0.0])
    return Camera.look_at(pos, CENTER, fov, (n_pix, n_pix))


class TestCamera:
    def test_frame_orthonormal(self):
        cam = front_camera()
        for a, b in [("right", "up"), ("right", "forward"), ("up", "forward")]:
            assert abs(getattr(cam, a) @ getattr(cam, b)) < 1e-9

    def test_center_ray_is_forward(self):
        cam = front_camera(n_pix=65)  # odd so a pixel center sits on the axis
        d = cam.ray_directions()[32, 32]
        assert np.allclose(d, cam.forward, atol=1e-9)

    def test_top_row_points_up(self):
        cam = front_camera()
        dirs = cam.ray_directions()
        assert dirs[0, 32] @ cam.up > 0
        assert dirs[-1, 32] @ cam.up < 0
        assert dirs[32, -1] @ cam.right > 0

    def test_bad_frame_rejected(self):
        with pytest.raises(ValueError):
            Camera(np.zeros(3), np.array([0, 1, 0.0]), np.array([0, 1, 0.0]),
                   np.array([1, 0, 0.0]), 1.0, (8, 8))

    def test_camera_space_depth(self):
        cam = front_camera(distance=20.0)
        p = CENTER[None, :]
        assert cam.depth_of(p)[0] == pytest.approx(20.0)
        cs = cam.to_camera_space(p)[0]
        assert np.allclose(cs, [0, 0, 20.0], atol=1e-12)


class TestTrace:
    def test_center_ray_depth(self):
        g = sphere_grid(radius=10.0)
        cam = front_camera(n_pix=65, distance=20.0)
        h = trace(g, cam, (32, 32))
        assert h is not None
        assert h["depth"] == pytest.approx(10.0, abs=0.02)
        # trilinear gradients carry O(h/2r) error at node-aligned hits
        assert np.allclose(h["normal"], [0, -1, 0], atol=0.08)
        assert h["ndotv"] == pytest.approx(-1.0, abs=0.01)

    def test_missing_ray(self):
        g = sphere_grid(radius=6.0)
        cam = front_camera()
        assert trace(g, cam, (0, 0)) is None

    def test_grazing_ray_no_nan(self):
        g = sphere_grid(radius=10.0)
        cam = front_camera(distance=20.0)
        # aim just at the silhouette rim: tangent height ~ atan(r/sqrt(d^2-r^2))
        origins = cam.position[None, :]
        angle = np.arcsin(10.0 / 20.0)
        d = np.cos(angle) * cam.forward + np.sin(angle) * cam.up
        hit, t, pts, nrm = trace_rays(g, origins, d[None, :])
        assert np.all(np.isfinite(t)) and np.all(np.isfinite(pts))
        if hit[0]:
            ndotv = nrm[0] @ d
            assert abs(ndotv) < 0.25

    def test_hit_tolerance(self):
        g = sphere_grid(radius=10.0)
        cam = front_camera(n_pix=33)
        hit, t, pts, _ = trace_rays(g, cam.position[None, :].repeat(33 * 33, 0),
                                    cam.ray_directions().reshape(-1, 3))
        vals = np.abs(g.sample(pts[hit]))
        assert np.all(vals <= 1e-3 * g.spacing + 1e-9)


class TestRender:
    def test_empty_grid_background(self):
        g = LevelSetGrid(np.full((16, 16, 16), 4.0), 3.0)
        cam = Camera.look_at((-40, -40, 20), (22, 22, 22), 1.0, (32, 24))
        scene = SceneModel3D(shading="constant", albedo=0.9, background=0.3)
        buf = render(g, cam, scene)
        assert np.all(buf.hit_mask == 0)
        assert np.allclose(buf.radiance.data, 0.3)

    def test_constant_albedo(self):
        g = sphere_grid()
        scene = SceneModel3D(shading="constant", albedo=0.6, background=0.1)
        buf = render(g, front_camera(), scene)
        assert buf.hit_mask.any()
        assert np.allclose(buf.radiance.data[buf.hit_mask == 1], 0.6)
        assert np.allclose(buf.radiance.data[buf.hit_mask == 0], 0.1)

    def test_lambert_light_along_view(self):
        g = sphere_grid(radius=10.0)
        cam = front_camera(n_pix=65, distance=22.0)
        scene = SceneModel3D(shading="lambertian", albedo=0.8,
                             light_dir=-cam.forward, background=0.0)
        buf = render(g, cam, scene)
        assert buf.radiance.data[32, 32] == pytest.approx(0.8, abs=0.02)
        # limb darkening: visible-rim n.l approaches r/d = 10/22 for a sphere
        row = buf.radiance.data[32]
        hits = np.nonzero(buf.hit_mask[32])[0]
        assert row[hits[0]] < 0.75 * row[32]
        assert row[hits[0]] > 0.8 * (10.0 / 22.0) - 0.1
        lam = np.maximum(0.0, np.sum(buf.normal[32, hits] * (-cam.forward), axis=1))
        assert np.allclose(row[hits], 0.8 * lam, atol=0.05)

    def test_projected_area(self):
        r, d = 10.0, 24.0
        g = sphere_grid(radius=r)
        cam = front_camera(n_pix=128, distance=d, fov=np.radians(70))
        buf = render(g, cam, SceneModel3D())
        px = cam.pixel_extent()
        measured = buf.hit_mask.sum() * px * px
        silhouette_r = r / np.sqrt(d * d - r * r)  # on the unit-depth plane
        assert measured == pytest.approx(np.pi * silhouette_r ** 2, rel=0.03)

    def test_normals_unit_at_hits(self):
        g = sphere_grid()
        buf = render(g, front_camera(), SceneModel3D())
        lens = np.linalg.norm(buf.normal[buf.hit_mask == 1], axis=1)
        assert np.all(np.abs(lens - 1) < 1e-3)

    def test_deterministic(self):
        g = sphere_grid()
        a = render(g, front_camera(), SceneModel3D())
        b = render(g, front_camera(), SceneModel3D())
        assert np.array_equal(a.radiance.data, b.radiance.data)


class TestShadowRay:
    def test_clear_path(self):
        g = sphere_grid(radius=6.0)
        occ, pt = shadow_ray(g, (4.0, 4.0, 4.0), (4.0, 4.0, 44.0))
        assert occ == 0 and pt is None

    def test_sphere_blocks(self):
        g = sphere_grid(radius=8.0)
        src = CENTER - np.array([0, 0, 20.0])
        dst = CENTER + np.array([0, 0, 20.0])
        occ, pt = shadow_ray(g, src, dst)
        assert occ == 1
        assert pt[2] == pytest.approx(CENTER[2] - 8.0, abs=0.02)

    def test_degenerate_segment(self):
        g = sphere_grid(radius=8.0)
        occ, pt = shadow_ray(g, CENTER, CENTER)
        assert occ == 0


class TestMakeTarget:
    def test_sphere_center_value(self):
        g = make_target("sphere", (32, 32, 32), center=(16, 16, 16), radius=7.0)
        assert g.values[16, 16, 16] == pytest.approx(-7.0)

    def test_torus_surface_point(self):
        g = make_target("torus", (48, 48, 48), center=CENTER, major=12.0, minor=4.0)
        p = CENTER + np.array([16.0, 0, 0])
        assert abs(g.sample(p[None, :])[0]) <= g.spacing

    def test_holeball_axis_rays_open(self):
        n = 64
        c = np.full(3, 32.0)
        g = make_target("holeball", (n, n, n), center=c, radius=20.0, hole_radius=7.0)
        for axis in range(3):
            d = np.zeros(3)
            d[axis] = 1.0
            origin = c - 40.0 * d
            hit, _, _, _ = trace_rays(g, origin[None, :], d[None, :])
            assert not hit[0], f"axis {axis} should be open"
        # off-axis ray still hits the ball body
        d = np.array([1.0, 0.4, 0.3])
        d /= np.linalg.norm(d)
        hit, _, _, _ = trace_rays(g, (c - 40 * d)[None, :], d[None, :])
        assert hit[0]

    def test_unknown_shape(self):
        with pytest.raises(ValueError):
            make_target("cube", (16, 16, 16))


class TestCameraIO:
    def test_round_trip(self, tmp_path):
        cams = orbit_cameras(CENTER, 30.0, [(0, 20), (90, -35), (200, 70)],
                             np.radians(50), (64, 48))
        p = tmp_path / "cams.txt"
        save_cameras(cams, p)
        back = load_cameras(p)
        assert len(back) == 3
        for a, b in zip(cams, back):
            assert np.allclose(a.position, b.position, atol=1e-6)
            assert np.allclose(a.forward, b.forward, atol=1e-6)
            assert np.allclose(a.up, b.up, atol=1e-6)
            assert a.fov_y == pytest.approx(b.fov_y)
            assert a.resolution == b.resolution

    def test_bad_line_rejected(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("1 2 3\n")
        with pytest.raises(ValueError):
            load_cameras(p)


class TestBackgroundImage:
    def test_floorless_constant(self):
        cam = front_camera(n_pix=16)
        scene = SceneModel3D(background=0.4)
        img = background_image(cam, scene)
        assert np.allclose(img.data, 0.4)
