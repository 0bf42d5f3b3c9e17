"""Small closed-form meshes used as test inputs and corpus seeds."""

from __future__ import annotations

import numpy as np

from ..mesh import TriangleMesh

_PHI = (1 + 5**0.5) / 2


def icosahedron() -> TriangleMesh:
    v = np.array(
        [
            [-1, _PHI, 0], [1, _PHI, 0], [-1, -_PHI, 0], [1, -_PHI, 0],
            [0, -1, _PHI], [0, 1, _PHI], [0, -1, -_PHI], [0, 1, -_PHI],
            [_PHI, 0, -1], [_PHI, 0, 1], [-_PHI, 0, -1], [-_PHI, 0, 1],
        ],
        dtype=np.float64,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    return TriangleMesh(v / np.linalg.norm(v, axis=1, keepdims=True), f)


def subdivide(mesh: TriangleMesh, project_radius: float | None = None) -> TriangleMesh:
    """Split each triangle into four at edge midpoints."""
    t = mesh.triangles
    edges = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    uniq, inv = np.unique(edges, axis=0, return_inverse=True)
    inv = inv.reshape(3, -1).T + len(mesh.vertices)
    mid = 0.5 * (mesh.vertices[uniq[:, 0]] + mesh.vertices[uniq[:, 1]])
    v = np.concatenate([mesh.vertices, mid])
    if project_radius is not None:
        v = v * (project_radius / np.linalg.norm(v, axis=1, keepdims=True))
    a, b, c = t[:, 0], t[:, 1], t[:, 2]
    ab, bc, ca = inv[:, 0], inv[:, 1], inv[:, 2]
    f = np.concatenate(
        [np.stack(x, axis=1) for x in ((a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca))]
    )
    return TriangleMesh(v, f)


def icosphere(subdivisions: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Geodesic sphere with ``20 * 4**subdivisions`` outward-facing triangles."""
    m = icosahedron()
    for _ in range(subdivisions):
        m = subdivide(m, project_radius=1.0)
    return TriangleMesh(m.vertices * radius + np.asarray(center, dtype=np.float64), m.triangles)


def cube(size: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Axis-aligned closed cube, 8 vertices and 12 outward-facing triangles."""
    c = np.indices((2, 2, 2)).reshape(3, -1).T.astype(np.float64)
    v = (c - 0.5) * size + np.asarray(center, dtype=np.float64)
    f = np.array(
        [
            [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],  # x = -, +
            [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],  # y = -, +
            [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],  # z = -, +
        ]
    )
    return TriangleMesh(v, f)


def hemisphere(subdivisions: int = 3, radius: float = 1.0) -> TriangleMesh:
    """Open upper half of an icosphere (z >= 0), boundary left open."""
    s = icosphere(subdivisions, radius)
    keep = s.vertices[s.triangles, 2].min(axis=1) >= -1e-12
    return TriangleMesh(s.vertices, s.triangles[keep]).remove_unreferenced()


def merge(*meshes: TriangleMesh) -> TriangleMesh:
    verts, tris, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + off)
        off += len(m.vertices)
    return TriangleMesh(np.concatenate(verts), np.concatenate(tris))


def flip(mesh: TriangleMesh) -> TriangleMesh:
    return TriangleMesh(mesh.vertices, mesh.triangles[:, ::-1].copy())
