"""Triangle mesh container shared by every module."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class TriangleMesh:
    """Float vertices plus a triangle index list.

    ``vertices`` is (n, 3) float64, ``triangles`` is (m, 3) int64.  ``normals``
    is optional per-vertex data.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(self.normals) != len(self.vertices):
                raise ValueError("normals must match vertex count")
        if len(self.triangles):
            lo, hi = self.triangles.min(), self.triangles.max()
            if lo < 0 or hi >= len(self.vertices):
                raise ValueError(f"triangle index out of range [0, {len(self.vertices)})")

    @classmethod
    def empty(cls) -> TriangleMesh:
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def copy(self) -> TriangleMesh:
        return TriangleMesh(
            self.vertices.copy(),
            self.triangles.copy(),
            None if self.normals is None else self.normals.copy(),
            dict(self.meta),
        )

    def triangle_areas(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def face_normals(self) -> np.ndarray:
        """Unit normals following the winding; zero for degenerate faces."""
        v = self.vertices[self.triangles]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)

    def signed_volume(self) -> float:
        """Enclosed volume via signed tetrahedra against the origin."""
        v = self.vertices[self.triangles]
        return float(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)

    def remove_unreferenced(self) -> TriangleMesh:
        used, inv = np.unique(self.triangles.ravel(), return_inverse=True)
        normals = None if self.normals is None else self.normals[used]
        return TriangleMesh(self.vertices[used], inv.reshape(-1, 3), normals, dict(self.meta))

    def connected_components(self) -> int:
        """Number of edge-connected triangle components."""
        from scipy.sparse import coo_matrix
        from scipy.sparse.csgraph import connected_components

        if self.is_empty():
            return 0
        m = self.remove_unreferenced()
        t = m.triangles
        rows = np.concatenate([t[:, 0], t[:, 1], t[:, 2]])
        cols = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
        n = len(m.vertices)
        g = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        return int(connected_components(g, directed=False)[0])
