"""Zero-isocontour extraction (marching squares) and loop topology counts."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .grid import LevelSetGrid


@dataclass
class ContourSet:
    """Closed polylines in world coordinates.

    Loops are implicitly closed (last vertex connects back to the first).
    orientation[i] is True when loop i encloses interior, in which case its
    vertices wind counterclockwise in the (x, y) plane.
    """

    loops: list = field(default_factory=list)
    orientation: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.loops)


def signed_area(loop: np.ndarray) -> float:
    x, y = loop[:, 0], loop[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def perimeter(loop: np.ndarray) -> float:
    d = np.roll(loop, -1, axis=0) - loop
    return float(np.sum(np.hypot(d[:, 0], d[:, 1])))


def point_in_polygon(points: np.ndarray, loop: np.ndarray) -> np.ndarray:
    """Even-odd containment test, vectorized over query points."""
    pts = np.atleast_2d(points)
    x1, y1 = loop[:, 0], loop[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    px = pts[:, 0][:, None]
    py = pts[:, 1][:, None]
    crosses = (y1[None, :] <= py) != (y2[None, :] <= py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x1[None, :] + (py - y1[None, :]) / (y2 - y1)[None, :] * (x2 - x1)[None, :]
    hit = crosses & (px < xint)
    inside = np.sum(hit, axis=1) % 2 == 1
    return inside if np.asarray(points).ndim > 1 else bool(inside[0])


def extract_contours(grid: LevelSetGrid) -> ContourSet:
    """Marching squares on the zero level with linear edge interpolation.

    The field is padded with a positive ring so regions clipped by the grid
    boundary still close along it. Saddle cells are disambiguated with the
    cell-center average.
    """
    if grid.ndim != 2:
        raise ValueError("contour extraction needs a 2D grid")
    h = grid.spacing
    pad = max(h, float(np.abs(grid.values).max()) * 1e-3 + h)
    v = np.pad(grid.values, 1, constant_values=pad)
    ox, oy = grid.origin - h

    inside = v <= 0.0
    if not inside.any():
        return ContourSet()

    nx, ny = v.shape
    # Crossing vertices on x-edges (between (i,j) and (i+1,j)) and y-edges.
    def edge_cross(a, b):
        mask = (a <= 0.0) != (b <= 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(mask, a / (a - b), 0.0)
        return mask, t

    xm, xt = edge_cross(v[:-1, :], v[1:, :])
    ym, yt = edge_cross(v[:, :-1], v[:, 1:])

    def xv(i, j):
        return (ox + (i + xt[i, j]) * h, oy + j * h)

    def yv(i, j):
        return (ox + i * h, oy + (j + yt[i, j]) * h)

    # Per cell (i, j): edge keys are ('x', i, j) bottom, ('x', i, j+1) top,
    # ('y', i, j) left, ('y', i+1, j) right.
    segments = []  # (edge_key_a, edge_key_b, vert_a, vert_b)
    ci, cj = np.nonzero(xm[:, :-1] | xm[:, 1:] | ym[:-1, :] | ym[1:, :])
    for i, j in zip(ci, cj):
        crossings = []
        if xm[i, j]:
            crossings.append((("x", i, j), xv(i, j)))
        if ym[i + 1, j]:
            crossings.append((("y", i + 1, j), yv(i + 1, j)))
        if xm[i, j + 1]:
            crossings.append((("x", i, j + 1), xv(i, j + 1)))
        if ym[i, j]:
            crossings.append((("y", i, j), yv(i, j)))
        if len(crossings) == 2:
            segments.append((*crossings[0], *crossings[1]))
        elif len(crossings) == 4:
            # Order above is bottom, right, top, left. Pair around the
            # exterior corners when the center is interior and vice versa.
            center = 0.25 * (v[i, j] + v[i + 1, j] + v[i, j + 1] + v[i + 1, j + 1])
            if center <= 0.0:
                pairs = ((0, 1), (2, 3))
            else:
                pairs = ((0, 3), (1, 2))
            for a, b in pairs:
                segments.append((*crossings[a], *crossings[b]))

    # Chain segments into loops via shared edge keys.
    by_edge: dict = {}
    for idx, (ka, _, kb, _) in enumerate(segments):
        by_edge.setdefault(ka, []).append(idx)
        by_edge.setdefault(kb, []).append(idx)

    used = np.zeros(len(segments), dtype=bool)
    loops = []
    for start in range(len(segments)):
        if used[start]:
            continue
        ka, va, kb, vb = segments[start]
        used[start] = True
        verts = [va, vb]
        keys = [ka, kb]
        cur_key = kb
        cur_seg = start
        while True:
            nxt = [s for s in by_edge[cur_key] if s != cur_seg]
            if not nxt:
                break
            cur_seg = nxt[0]
            if used[cur_seg]:
                break
            used[cur_seg] = True
            ska, sva, skb, svb = segments[cur_seg]
            if ska == cur_key:
                cur_key, vert = skb, svb
            else:
                cur_key, vert = ska, sva
            if cur_key == keys[0]:
                break
            verts.append(vert)
            keys.append(cur_key)
        if len(verts) >= 3:
            loops.append(np.array(verts, dtype=np.float64))

    # Orient: a loop encloses interior iff the interior node next to one of
    # its crossings lies inside the polygon.
    cs = ContourSet()
    for loop in loops:
        probe = _interior_probe(loop, v, h, ox, oy)
        encloses = bool(point_in_polygon(probe[None, :], loop)[0]) if probe is not None else False
        area = signed_area(loop)
        if encloses != (area > 0):
            loop = loop[::-1].copy()
        cs.loops.append(loop)
        cs.orientation.append(encloses)
    return cs


def _interior_probe(loop: np.ndarray, v: np.ndarray, h: float, ox: float, oy: float):
    """Grid node on the interior side of the loop, picked at the deepest crossing."""
    best = None
    best_val = 0.0
    for vert in loop:
        gx = (vert[0] - ox) / h
        gy = (vert[1] - oy) / h
        for i, j in ((int(np.floor(gx)), int(round(gy))), (int(np.ceil(gx)), int(round(gy))),
                     (int(round(gx)), int(np.floor(gy))), (int(round(gx)), int(np.ceil(gy)))):
            if 0 <= i < v.shape[0] and 0 <= j < v.shape[1] and v[i, j] < best_val:
                best_val = v[i, j]
                best = np.array([ox + i * h, oy + j * h])
    return best


def count_topology(cs: ContourSet) -> tuple[int, int]:
    """(components, holes): loops at even and odd nesting depth."""
    n = len(cs.loops)
    if n == 0:
        return 0, 0
    depth = np.zeros(n, dtype=int)
    for i in range(n):
        probe = cs.loops[i][0][None, :]
        for j in range(n):
            if i == j:
                continue
            if point_in_polygon(probe, cs.loops[j])[0]:
                depth[i] += 1
    components = int(np.sum(depth % 2 == 0))
    holes = int(np.sum(depth % 2 == 1))
    return components, holes


def topology_counts_grid(grid: LevelSetGrid) -> tuple[int, int]:
    """Fast (components, holes) from the sign mask, for per-iteration logging.

    Holes are background components that do not touch the grid boundary.
    """
    fg = grid.values <= 0.0
    _, n_fg = ndimage.label(fg)
    bg_labels, n_bg = ndimage.label(~fg)
    border = np.unique(np.concatenate([
        bg_labels[0, :], bg_labels[-1, :], bg_labels[:, 0], bg_labels[:, -1]]))
    border = border[border != 0]
    holes = n_bg - border.size
    return int(n_fg), int(holes)
