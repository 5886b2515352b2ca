"""Isosurface extraction and mesh measurements (export only; the evolution
never consumes the mesh)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from skimage import measure

from .grid import LevelSetGrid


@dataclass
class TriMesh:
    vertices: np.ndarray  # (V, 3) world positions
    triangles: np.ndarray  # (T, 3) vertex indices
    normals: np.ndarray  # (V, 3) unit outward vectors

    @property
    def empty(self) -> bool:
        return len(self.triangles) == 0


def extract_mesh(grid: LevelSetGrid) -> TriMesh:
    """Marching cubes on the zero level; normals point toward phi > 0."""
    if grid.ndim != 3:
        raise ValueError("mesh extraction needs a 3D grid")
    v = grid.values
    if v.min() > 0 or v.max() < 0:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), np.zeros((0, 3)))
    verts, faces, _, _ = measure.marching_cubes(v, level=0.0,
                                                spacing=(grid.spacing,) * 3)
    verts = verts + grid.origin[None, :]
    normals = grid.sample_gradient(verts)
    lens = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = normals / np.maximum(lens, 1e-12)
    return TriMesh(verts, faces.astype(np.int64), normals)


def surface_area(mesh: TriMesh) -> float:
    a = mesh.vertices[mesh.triangles[:, 0]]
    b = mesh.vertices[mesh.triangles[:, 1]]
    c = mesh.vertices[mesh.triangles[:, 2]]
    cross = np.cross(b - a, c - a)
    return float(0.5 * np.linalg.norm(cross, axis=1).sum())


def euler_characteristic(mesh: TriMesh) -> int:
    if mesh.empty:
        return 0
    v = len(mesh.vertices)
    f = len(mesh.triangles)
    edges = np.concatenate([mesh.triangles[:, [0, 1]], mesh.triangles[:, [1, 2]],
                            mesh.triangles[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    e = len(np.unique(edges, axis=0))
    return v - e + f


def connected_components(mesh: TriMesh) -> int:
    if mesh.empty:
        return 0
    parent = np.arange(len(mesh.vertices))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for tri in mesh.triangles:
        a = find(tri[0])
        for k in (1, 2):
            b = find(tri[k])
            if a != b:
                parent[b] = a
    roots = {find(i) for i in np.unique(mesh.triangles)}
    return len(roots)


def genus(mesh: TriMesh) -> int:
    """Total genus summed over closed components: C - chi/2."""
    if mesh.empty:
        return 0
    return connected_components(mesh) - euler_characteristic(mesh) // 2


def chamfer_distance(points_a: np.ndarray, points_b: np.ndarray) -> float:
    """Symmetric mean nearest-neighbor distance between two point sets."""
    if len(points_a) == 0 or len(points_b) == 0:
        return float("inf")
    da = cKDTree(points_b).query(points_a)[0]
    db = cKDTree(points_a).query(points_b)[0]
    return float(0.5 * (da.mean() + db.mean()))


def save_obj(mesh: TriMesh, path) -> None:
    with open(path, "w") as f:
        for p in mesh.vertices:
            f.write(f"v {p[0]:.6f} {p[1]:.6f} {p[2]:.6f}\n")
        for n in mesh.normals:
            f.write(f"vn {n[0]:.6f} {n[1]:.6f} {n[2]:.6f}\n")
        for t in mesh.triangles:
            a, b, c = (int(i) + 1 for i in t)
            f.write(f"f {a}//{a} {b}//{b} {c}//{c}\n")
