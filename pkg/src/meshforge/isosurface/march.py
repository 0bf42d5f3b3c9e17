"""Vectorised marching over batches of grid cells."""

from __future__ import annotations

import numpy as np

from . import cases
from ..mesh import TriangleMesh

_BITS = (1 << np.arange(8)).astype(np.int64)
_EDGE_LO = np.array([e[0] for e in cases.EDGES])
_EDGE_HI = np.array([e[1] for e in cases.EDGES])
_EDGE_AXIS = np.array([e[2] for e in cases.EDGES])


class Grid:
    """Uniform vertex lattice with ``res + 1`` points per axis over ``bounds``.

    Point coordinates are always ``lo + index * step``; keeping one formula
    makes values bitwise reproducible between sparse and dense passes.
    """

    def __init__(self, res: int, bounds):
        self.res = int(res)
        self.lo = np.asarray(bounds[0], dtype=np.float64)
        self.hi = np.asarray(bounds[1], dtype=np.float64)
        self.step = (self.hi - self.lo) / self.res
        self.n = self.res + 1

    def points(self, idx) -> np.ndarray:
        return self.lo + np.asarray(idx, dtype=np.float64) * self.step

    def key(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        return (idx[..., 0] * self.n + idx[..., 1]) * self.n + idx[..., 2]

    def unkey(self, key) -> np.ndarray:
        key = np.asarray(key, dtype=np.int64)
        z = key % self.n
        y = (key // self.n) % self.n
        x = key // (self.n * self.n)
        return np.stack([x, y, z], axis=-1)

    @property
    def cell_diagonal(self) -> float:
        return float(np.linalg.norm(self.step))


def nudge(values: np.ndarray, cell_size: float) -> np.ndarray:
    """Replace exact zeros by a tiny positive value."""
    out = np.array(values, dtype=np.float64, copy=True)
    out[out == 0] = 1e-12 * cell_size
    return out


def face_bits(signs: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Resolved ambiguous faces as a 6-bit mask per cell (1 = positive joined)."""
    bits = np.zeros(len(signs), dtype=np.int64)
    for f in range(6):
        a, b, c, d = cases.FACE_CORNERS[f]
        amb = (signs[:, a] == signs[:, c]) & (signs[:, b] == signs[:, d]) & (signs[:, a] != signs[:, b])
        if not amb.any():
            continue
        va, vb, vc, vd = (values[amb, k] for k in (a, b, c, d))
        det = va * vc - vb * vd
        joined = np.where(va > 0, det >= 0, det <= 0)
        col = np.zeros(len(signs), dtype=bool)
        col[amb] = joined
        bits |= col.astype(np.int64) << f
    return bits


def case_keys(signs: np.ndarray, values: np.ndarray) -> np.ndarray:
    config = (signs.astype(np.int64) * _BITS).sum(axis=1)
    return config | (face_bits(signs, values) << 8)


def needs_full_values(keys: np.ndarray) -> np.ndarray:
    uniq, inv = np.unique(keys, return_inverse=True)
    flags = np.array([cases.case_info(int(k)).needs_interior for k in uniq], dtype=bool)
    return flags[inv.reshape(-1)]


def crossing_edge_mask(signs: np.ndarray) -> np.ndarray:
    """(N, 12) mask of sign-changing edges."""
    return signs[:, _EDGE_LO] != signs[:, _EDGE_HI]


def corners_needing_values(signs: np.ndarray) -> np.ndarray:
    """(N, 8) mask of corners that are endpoints of a sign-changing edge."""
    cross = crossing_edge_mask(signs)
    need = np.zeros(signs.shape, dtype=bool)
    for e in range(12):
        need[:, _EDGE_LO[e]] |= cross[:, e]
        need[:, _EDGE_HI[e]] |= cross[:, e]
    return need


def march(grid: Grid, cells: np.ndarray, signs: np.ndarray, values: np.ndarray) -> TriangleMesh:
    """Triangulate ``cells`` (N, 3) given corner signs and values (N, 8).

    Values must be exact (already nudged) on every endpoint of a crossing
    edge; for cells whose case needs the interior test all eight are required.
    Other entries may be NaN.  Output is deterministic: vertices ordered by
    edge key then by owning cell, triangles by cell then template order.
    """
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 3)
    if len(cells) == 0:
        return TriangleMesh.empty()
    order = np.argsort(grid.key(cells), kind="stable")
    cells, signs, values = cells[order], signs[order], values[order]
    config = (signs.astype(np.int64) * _BITS).sum(axis=1)
    keep = (config != 0) & (config != 255)
    cells, signs, values = cells[keep], signs[keep], values[keep]
    if len(cells) == 0:
        return TriangleMesh.empty()
    keys0 = case_keys(signs, values)
    full = needs_full_values(keys0)
    # group cells by (case key, interior merges); merges only exist for the
    # few cells that need the interior test
    composite = keys0.copy()
    special = {}
    for i in np.flatnonzero(full):
        m = cases.interior_merges(values[i].tolist(), cases.case_info(int(keys0[i])))
        if m:
            composite[i] = -1 - special.setdefault((int(keys0[i]), m), len(special))
    uniq, first, tid = np.unique(composite, return_index=True, return_inverse=True)
    tid = tid.reshape(-1)
    by_id = {v: k for k, v in special.items()}
    group_of = {}
    for g, (u, f) in enumerate(zip(uniq.tolist(), first.tolist())):
        group_of[by_id[-1 - u] if u < 0 else (u, ())] = g

    corner_idx = cells[:, None, :] + cases.CORNERS[None, :, :]
    edge_keys = grid.key(corner_idx[:, _EDGE_LO, :]) * 3 + _EDGE_AXIS[None, :]

    tri_cell, tri_local, tri_refs = [], [], []
    ext_recipe = []
    n_interior = 0
    for (k, m), g in sorted(group_of.items(), key=lambda kv: kv[1]):
        tmpl = cases.template(k, m)
        members = np.flatnonzero(tid == g)
        if len(tmpl.triangles) == 0:
            continue
        t = tmpl.triangles
        is_edge = t < 12
        refs = edge_keys[members][:, np.where(is_edge, t, 0)]
        n_int = len(tmpl.interior)
        if n_int:
            local = np.arange(len(members))[:, None, None] * n_int
            ids = n_interior + local + np.where(is_edge, 0, t - 12)[None]
            refs = np.where(is_edge[None], refs, -1 - ids)
            ext_recipe.append((members, tmpl.interior))
            n_interior += len(members) * n_int
        tri_cell.append(np.repeat(members, len(t)))
        tri_local.append(np.tile(np.arange(len(t)), len(members)))
        tri_refs.append(refs.reshape(-1, 3))

    if not tri_refs:
        return TriangleMesh.empty()
    tri_cell = np.concatenate(tri_cell)
    tri_local = np.concatenate(tri_local)
    refs = np.concatenate(tri_refs)

    ukeys = np.unique(refs[refs >= 0])
    # endpoint values for each unique edge from any owning (cell, edge)
    cand = np.flatnonzero(crossing_edge_mask(signs).ravel())
    flat = edge_keys.ravel()[cand]
    pos = np.minimum(np.searchsorted(ukeys, flat), len(ukeys) - 1)
    hit = ukeys[pos] == flat
    owner = np.empty(len(ukeys), dtype=np.int64)
    owner[pos[hit]] = cand[hit]
    oc, oe = owner // 12, owner % 12
    vlo = values[oc, _EDGE_LO[oe]]
    vhi = values[oc, _EDGE_HI[oe]]
    if not (np.isfinite(vlo).all() and np.isfinite(vhi).all()):
        raise ValueError("missing corner value on a crossing edge")
    axis = ukeys % 3
    p = grid.points(grid.unkey(ukeys // 3))
    t = vlo / (vlo - vhi)
    rows = np.arange(len(ukeys))
    p[rows, axis] = p[rows, axis] + t * grid.step[axis]

    interior_pts = np.zeros((n_interior, 3))
    cursor = 0
    for members, recipes in ext_recipe:
        n_int = len(recipes)
        for r, recipe in enumerate(recipes):
            acc = np.zeros((len(members), 3))
            for e, w in recipe:
                acc = acc + w * p[np.searchsorted(ukeys, edge_keys[members, e])]
            interior_pts[cursor + np.arange(len(members)) * n_int + r] = acc
        cursor += len(members) * n_int

    n_edge = len(ukeys)
    out = np.empty_like(refs)
    em = refs >= 0
    out[em] = np.searchsorted(ukeys, refs[em])
    out[~em] = n_edge + (-1 - refs[~em])
    verts = np.concatenate([p, interior_pts]) if n_interior else p
    order = np.lexsort((tri_local, tri_cell))
    return TriangleMesh(verts, out[order])


def march_cell(corner_values, cell_origin=(0.0, 0.0, 0.0), cell_size: float = 1.0) -> list:
    """Triangles (list of 3x3 arrays) for one cube with the given corner values."""
    v = np.asarray(corner_values, dtype=np.float64).reshape(8)
    if not np.all(np.isfinite(v)):
        raise ValueError("corner values must be finite")
    v = nudge(v, cell_size)
    grid = Grid(1, (np.asarray(cell_origin, float), np.asarray(cell_origin, float) + cell_size))
    mesh = march(grid, np.zeros((1, 3), dtype=np.int64), (v > 0)[None], v[None])
    return [mesh.vertices[t] for t in mesh.triangles]
