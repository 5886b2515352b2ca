"""Vector-graphics export: loop simplification, document assembly, SVG writing.

All loops of a converged level set go into a single even-odd filled path, which
encodes nesting (holes, islands) without an explicit containment tree and
matches the parity semantics of the level-set sign.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .contours import ContourSet, extract_contours, point_in_polygon, signed_area
from .grid import LevelSetGrid
from .images import ImageBuffer


@dataclass
class VectorDocument:
    width: float
    height: float
    loops: list = field(default_factory=list)  # closed polylines, world = user units
    fill_color: np.ndarray = field(default_factory=lambda: np.zeros(3))
    background: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        self.fill_color = np.clip(np.atleast_1d(np.asarray(self.fill_color, float)), 0.0, 1.0)
        self.background = np.clip(np.atleast_1d(np.asarray(self.background, float)), 0.0, 1.0)


def _dp_keep(points: np.ndarray, first: int, last: int, tol: float, keep: np.ndarray) -> None:
    """Douglas-Peucker on the open chain points[first..last]."""
    stack = [(first, last)]
    while stack:
        a, b = stack.pop()
        if b <= a + 1:
            continue
        seg = points[b] - points[a]
        ln2 = float(seg @ seg)
        rel = points[a + 1:b] - points[a]
        if ln2 < 1e-30:
            dist = np.linalg.norm(rel, axis=1)
        else:
            t = np.clip((rel @ seg) / ln2, 0.0, 1.0)
            dist = np.linalg.norm(rel - t[:, None] * seg, axis=1)
        imax = int(np.argmax(dist))
        if dist[imax] > tol:
            mid = a + 1 + imax
            keep[mid] = True
            stack.append((a, mid))
            stack.append((mid, b))


def simplify(cs: ContourSet, tol: float) -> ContourSet:
    """Douglas-Peucker on closed loops; removed vertices deviate at most tol."""
    if tol < 0:
        raise ValueError("tolerance must be nonnegative")
    if tol == 0:
        return ContourSet([l.copy() for l in cs.loops], list(cs.orientation))
    out = ContourSet()
    for loop, orient in zip(cs.loops, cs.orientation):
        n = len(loop)
        if n <= 4:
            out.loops.append(loop.copy())
            out.orientation.append(orient)
            continue
        # split the closed loop at two mutually far vertices
        a = 0
        b = int(np.argmax(np.linalg.norm(loop - loop[0], axis=1)))
        if b == 0:
            b = n // 2
        lo, hi = min(a, b), max(a, b)
        keep = np.zeros(n, dtype=bool)
        keep[[lo, hi]] = True
        _dp_keep(loop, lo, hi, tol, keep)
        wrapped = np.concatenate([loop[hi:], loop[:lo + 1]])
        keep_w = np.zeros(len(wrapped), dtype=bool)
        keep_w[[0, len(wrapped) - 1]] = True
        _dp_keep(wrapped, 0, len(wrapped) - 1, tol, keep_w)
        for k in range(1, len(wrapped) - 1):
            if keep_w[k]:
                keep[(hi + k) % n] = True
        kept = loop[keep]
        if len(kept) >= 3:
            out.loops.append(kept)
            out.orientation.append(orient)
    return out


def _sorted_loops(loops):
    def key(loop):
        mins = loop.min(axis=0)
        return (round(mins[0], 9), round(mins[1], 9), -abs(signed_area(loop)))

    return sorted(loops, key=key)


def build_document(grid: LevelSetGrid, colors, tol: float) -> VectorDocument:
    """Trace the zero set of a 2D grid into an even-odd filled document.

    colors is the (foreground, background) pair used for compositing. The
    canvas spans the grid's node extent, so rasterizing at grid resolution
    lines pixel centers up with nodes.
    """
    if grid.ndim != 2:
        raise ValueError("vector export needs a 2D grid")
    fg, bg = colors
    cs = simplify(extract_contours(grid), tol)
    nx, ny = grid.dims
    doc = VectorDocument(width=float(nx), height=float(ny),
                         fill_color=np.resize(np.atleast_1d(fg), 3),
                         background=np.resize(np.atleast_1d(bg), 3))
    # node k maps to pixel center k + 0.5 in user units
    doc.loops = _sorted_loops([(loop - grid.origin) / grid.spacing + 0.5 for loop in cs.loops])
    return doc


def rasterize_document(doc: VectorDocument, width: int, height: int,
                       channels: int = 1) -> ImageBuffer:
    """Even-odd scanline fill at pixel centers; the self-check counterpart of
    the SVG renderer."""
    xs = (np.arange(width) + 0.5) * doc.width / width
    ys = (np.arange(height) + 0.5) * doc.height / height
    px, py = np.meshgrid(xs, ys)  # [row, col]
    pts = np.stack([px.ravel(), py.ravel()], axis=1)
    parity = np.zeros(len(pts), dtype=int)
    chunk = 8192  # bounds the (points x edges) intermediate
    for loop in doc.loops:
        for start in range(0, len(pts), chunk):
            sl = slice(start, start + chunk)
            parity[sl] += point_in_polygon(pts[sl], loop)
    inside = (parity % 2 == 1).reshape(height, width)
    fg = doc.fill_color
    bg = doc.background
    if channels == 1:
        img = np.where(inside, fg.mean(), bg.mean())
        return ImageBuffer(img)
    out = np.where(inside[:, :, None], fg[None, None, :], bg[None, None, :])
    return ImageBuffer(out)


def _fmt(x: float) -> str:
    return f"{x:.3f}"


def _css_color(c: np.ndarray) -> str:
    r, g, b = (int(round(float(v) * 255)) for v in np.resize(c, 3))
    return f"#{r:02x}{g:02x}{b:02x}"


def write_svg(doc: VectorDocument) -> bytes:
    """Deterministic SVG 1.1 subset: background rect plus one even-odd path."""
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{_fmt(doc.width)}" height="{_fmt(doc.height)}" '
        f'viewBox="0 0 {_fmt(doc.width)} {_fmt(doc.height)}">',
        f'<rect x="0" y="0" width="{_fmt(doc.width)}" height="{_fmt(doc.height)}" '
        f'fill="{_css_color(doc.background)}"/>',
    ]
    if doc.loops:
        parts = []
        for loop in doc.loops:
            coords = [f"{_fmt(p[0])},{_fmt(p[1])}" for p in loop]
            parts.append("M " + " L ".join(coords) + " Z")
        lines.append(f'<path d="{" ".join(parts)}" fill="{_css_color(doc.fill_color)}" '
                     f'fill-rule="evenodd"/>')
    lines.append("</svg>")
    return ("\n".join(lines) + "\n").encode("utf-8")


def save_svg(doc: VectorDocument, path) -> None:
    with open(path, "wb") as f:
        f.write(write_svg(doc))
