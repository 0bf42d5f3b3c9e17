"""Exact combinatorial audit of triangle meshes."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ..mesh import TriangleMesh


@dataclass
class WatertightReport:
    is_closed: bool
    is_manifold: bool
    boundary_edge_count: int
    non_manifold_edge_count: int
    euler_characteristic: int
    orientation_consistent: bool
    non_manifold_vertex_count: int
    degenerate_triangle_count: int

    def as_dict(self) -> dict:
        return asdict(self)


def verify_watertight(mesh: TriangleMesh) -> WatertightReport:
    t = mesh.triangles
    if len(t) == 0:
        return WatertightReport(False, True, 0, 0, 0, True, 0, 0)
    degenerate = (t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])
    directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    und = np.sort(directed, axis=1)
    nv = int(t.max()) + 1
    ukey, inv, counts = np.unique(und[:, 0] * nv + und[:, 1], return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    boundary = int((counts == 1).sum())
    non_manifold = int((counts > 2).sum())

    # orientation: each shared edge must appear once in each direction
    forward = directed[:, 0] < directed[:, 1]
    fwd_count = np.bincount(inv, weights=forward, minlength=len(ukey))
    two = counts == 2
    oriented = bool(np.all(fwd_count[two] == 1))

    # vertex links: wedges around a vertex must form one fan
    n_f = len(t)
    tri_of = np.tile(np.arange(n_f), 3)
    pair_edges = np.flatnonzero(two)
    order = np.argsort(inv, kind="stable")
    starts = np.searchsorted(inv[order], pair_edges)
    h1, h2 = order[starts], order[starts + 1]
    t1, t2 = tri_of[h1], tri_of[h2]
    rows, cols = [], []
    for end in (0, 1):
        v = und[h1, end]
        w1 = _wedge(t, t1, v)
        w2 = _wedge(t, t2, v)
        rows.append(w1)
        cols.append(w2)
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    g = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(3 * n_f, 3 * n_f))
    _, label = connected_components(g, directed=False)
    wedge_vertex = t.T.ravel()  # wedge id = corner * n_f + tri
    per_vertex = np.unique(np.stack([wedge_vertex, label], axis=1), axis=0)[:, 0]
    fans = np.bincount(per_vertex, minlength=nv)
    used = np.bincount(t.ravel(), minlength=nv) > 0
    bad_vertices = int((fans[used] > 1).sum())

    n_vertices = int(used.sum())
    chi = n_vertices - len(ukey) + n_f
    manifold = non_manifold == 0 and bad_vertices == 0
    return WatertightReport(
        is_closed=boundary == 0 and manifold and oriented,
        is_manifold=manifold,
        boundary_edge_count=boundary,
        non_manifold_edge_count=non_manifold,
        euler_characteristic=int(chi),
        orientation_consistent=oriented,
        non_manifold_vertex_count=bad_vertices,
        degenerate_triangle_count=int(degenerate.sum()),
    )


def _wedge(t, tri, v):
    corner = np.where(t[tri, 0] == v, 0, np.where(t[tri, 1] == v, 1, 2))
    return corner * len(t) + tri
