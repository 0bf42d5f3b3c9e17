"""Training point groups: SPACE, curvature-weighted SURFACE and NEAR-SURFACE.

All randomness comes from per-chunk generators seeded by ``(seed, group,
chunk)``, so results are bitwise identical for any worker count.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .isosurface.audit import verify_watertight
from .mesh import TriangleMesh
from .meshkit.ply import write_ply

CHUNK = 1 << 16
DEFAULT_N = 500_000
DEFECT_FLOOR = 1e-3
DEFAULT_BIAS = 0.01
_GROUP_IDS = {"SPACE": 0, "SURFACE": 1, "NEAR_SURFACE": 2}
# fixed, deliberately non-axis-aligned ray directions for the parity vote
_RAY_DIRS = np.array(
    [
        [0.5773502691896258, 0.5773502691896258, 0.5773502691896258],
        [-0.2672612419124244, 0.5345224838248488, 0.8017837257372732],
        [0.8164965809277261, -0.4082482904638631, 0.4082482904638631],
    ]
)
_JITTER = 1e-12


@dataclass
class PointSampleSet:
    group: str
    points: np.ndarray
    seed: int
    normals: np.ndarray | None = None
    labels: np.ndarray | None = None  # True = inside (SPACE only)
    displacement: np.ndarray | None = None  # NEAR_SURFACE only
    triangle_index: np.ndarray | None = None  # source triangle per point
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.points)

    def sidecar(self) -> dict:
        out = {"group": self.group, "n": len(self.points), "seed": self.seed}
        if self.labels is not None:
            out["inside_fraction"] = float(self.labels.mean()) if len(self.labels) else 0.0
        out["labels"] = self.labels is not None
        out.update(self.meta)
        return out

    def to_ply(self) -> bytes:
        extra = {}
        if self.labels is not None:
            extra["inside"] = self.labels.astype(np.uint8)
        return write_ply(self.points, self.normals, extra, comments=[f"group {self.group}", f"seed {self.seed}"])


def _chunk_rng(seed: int, group: str, chunk: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), _GROUP_IDS[group], int(chunk)])


def _chunked(n: int, fn, workers: int) -> list:
    spans = [(i, s, min(s + CHUNK, n)) for i, s in enumerate(range(0, n, CHUNK))]
    if workers <= 1 or len(spans) <= 1:
        return [fn(*sp) for sp in spans]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda sp: fn(*sp), spans))


# ---------------------------------------------------------------- occupancy


class _RayIndex:
    """Triangles projected along one ray direction and binned on a 2-D grid."""

    def __init__(self, mesh: TriangleMesh, d: np.ndarray):
        hint = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        a = np.cross(d, hint)
        a /= np.linalg.norm(a)
        self.frame = (a, np.cross(d, a), d)
        V, t = mesh.vertices, mesh.triangles
        self.tu, self.tv, self.ts = ((V @ e)[t] for e in self.frame)
        tu, tv = self.tu, self.tv
        self.lo = (tu.min(), tv.min())
        G = int(np.clip(np.sqrt(len(t)) * 1.5, 1, 2048))
        self.G = G
        self.step = ((tu.max() - self.lo[0]) / G or 1.0, (tv.max() - self.lo[1]) / G or 1.0)
        c0u, c1u = (np.clip(((x - self.lo[0]) / self.step[0]).astype(np.int64), 0, G - 1) for x in (tu.min(1), tu.max(1)))
        c0v, c1v = (np.clip(((x - self.lo[1]) / self.step[1]).astype(np.int64), 0, G - 1) for x in (tv.min(1), tv.max(1)))
        w, h = c1u - c0u + 1, c1v - c0v + 1
        cnt = w * h
        rep = np.repeat(np.arange(len(t)), cnt)
        local = np.arange(int(cnt.sum())) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        cell = (c0u[rep] + local % w[rep]) * G + c0v[rep] + local // w[rep]
        order = np.argsort(cell, kind="stable")
        self.cell_tris = rep[order]
        self.ptr = np.searchsorted(cell[order], np.arange(G * G + 1))

    def parity(self, pts: np.ndarray) -> np.ndarray:
        """Parity of crossings of rays ``p + t d`` (t > 0) with the mesh."""
        a, b, d = self.frame
        tu, tv, ts = self.tu, self.tv, self.ts
        # tiny fixed jitter keeps rays off vertices and edges
        qu = pts @ a + _JITTER * np.sqrt(2.0)
        qv = pts @ b + _JITTER * np.sqrt(3.0)
        qs = pts @ d
        G = self.G
        pu = np.floor((qu - self.lo[0]) / self.step[0]).astype(np.int64)
        pv = np.floor((qv - self.lo[1]) / self.step[1]).astype(np.int64)
        pid = np.flatnonzero((pu >= 0) & (pu < G) & (pv >= 0) & (pv < G))
        pc = pu[pid] * G + pv[pid]
        n = self.ptr[pc + 1] - self.ptr[pc]
        prep = np.repeat(np.arange(len(pid)), n)
        off = np.arange(int(n.sum())) - np.repeat(np.cumsum(n) - n, n)
        tri = self.cell_tris[self.ptr[pc][prep] + off]
        p = pid[prep]
        x, y = qu[p], qv[p]
        u0, u1, u2 = tu[tri, 0], tu[tri, 1], tu[tri, 2]
        v0, v1, v2 = tv[tri, 0], tv[tri, 1], tv[tri, 2]
        area = (u1 - u0) * (v2 - v0) - (u2 - u0) * (v1 - v0)
        e0 = (u1 - x) * (v2 - y) - (u2 - x) * (v1 - y)
        e1 = (u2 - x) * (v0 - y) - (u0 - x) * (v2 - y)
        e2 = (u0 - x) * (v1 - y) - (u1 - x) * (v0 - y)
        sgn = np.sign(area)
        hit = (area != 0) & (e0 * sgn > 0) & (e1 * sgn > 0) & (e2 * sgn > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            depth = (e0 * ts[tri, 0] + e1 * ts[tri, 1] + e2 * ts[tri, 2]) / area
        hit &= depth > qs[p]
        return np.bincount(p[hit], minlength=len(pts)) % 2 == 1


class InsideTester:
    """Majority vote of ray parity along three fixed directions."""

    def __init__(self, mesh: TriangleMesh):
        self.empty = mesh.is_empty()
        self.indices = [] if self.empty else [_RayIndex(mesh, d) for d in _RAY_DIRS]

    def __call__(self, pts, block: int = CHUNK) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        out = np.zeros(len(pts), dtype=bool)
        if self.empty:
            return out
        for s in range(0, len(pts), block):
            q = pts[s : s + block]
            votes = sum(ix.parity(q).astype(np.int64) for ix in self.indices)
            out[s : s + block] = votes >= 2
        return out


def inside_mesh(mesh: TriangleMesh, pts) -> np.ndarray:
    return InsideTester(mesh)(pts)


def sample_space(mesh: TriangleMesh, n: int = DEFAULT_N, seed: int = 0, workers: int = 1, label: bool = True) -> PointSampleSet:
    """Uniform points in ``[-1, 1]^3`` with inside/outside labels.

    Labels are only produced for closed meshes; otherwise ``labels`` is None
    and ``meta["labels_refused"]`` explains why.
    """
    if n < 1:
        raise ValueError("n must be >= 1")

    def chunk(i, s, e):
        return _chunk_rng(seed, "SPACE", i).uniform(-1.0, 1.0, size=(e - s, 3))

    pts = np.concatenate(_chunked(n, chunk, workers))
    meta = {}
    labels = None
    if label:
        rep = verify_watertight(mesh)
        if rep.is_closed:
            tester = InsideTester(mesh)
            labels = np.concatenate(_chunked(n, lambda i, s, e: tester(pts[s:e]), workers))
        else:
            meta["labels_refused"] = f"mesh is not watertight ({rep.boundary_edge_count} boundary edges, {rep.non_manifold_edge_count} non-manifold edges)"
    return PointSampleSet("SPACE", pts, seed, labels=labels, meta=meta)


# ---------------------------------------------------------------- curvature


@dataclass
class CurvatureWeights:
    defect: np.ndarray  # per vertex, radians
    areas: np.ndarray  # per triangle
    weights: np.ndarray  # per triangle
    floor: float = DEFECT_FLOOR

    def probabilities(self) -> np.ndarray:
        return self.weights / self.weights.sum()


def corner_angles(mesh: TriangleMesh) -> np.ndarray:
    """(m, 3) interior angles; degenerate triangles give zeros."""
    v = mesh.vertices[mesh.triangles]
    ang = np.zeros((len(v), 3))
    for k in range(3):
        e1 = v[:, (k + 1) % 3] - v[:, k]
        e2 = v[:, (k + 2) % 3] - v[:, k]
        cr = np.linalg.norm(np.cross(e1, e2), axis=1)
        dt = np.einsum("ij,ij->i", e1, e2)
        ang[:, k] = np.arctan2(cr, dt)
    ang[mesh.triangle_areas() == 0] = 0.0
    return ang


def compute_curvature(mesh: TriangleMesh, floor: float = DEFECT_FLOOR) -> CurvatureWeights:
    """Angle defect per vertex and per-triangle sampling weights
    ``area * mean(clip(|defect|, floor, pi))`` over the three corners."""
    ang = corner_angles(mesh)
    total = np.bincount(mesh.triangles.ravel(), weights=ang.ravel(), minlength=mesh.n_vertices)
    used = np.bincount(mesh.triangles.ravel(), minlength=mesh.n_vertices) > 0
    defect = np.where(used, 2 * np.pi - total, 0.0)
    areas = mesh.triangle_areas()
    clamped = np.clip(np.abs(defect), floor, np.pi)
    w = areas * clamped[mesh.triangles].mean(axis=1)
    # zero-area triangles can never be hit, so they keep weight 0
    return CurvatureWeights(defect, areas, w, floor)


def _surface_points(mesh: TriangleMesh, probs: np.ndarray, rng: np.random.Generator, m: int):
    cdf = np.cumsum(probs)
    cdf /= cdf[-1]
    tri = np.minimum(np.searchsorted(cdf, rng.random(m), side="right"), len(cdf) - 1)
    r1, r2 = rng.random(m), rng.random(m)
    s = np.sqrt(r1)
    b0, b1, b2 = 1 - s, s * (1 - r2), s * r2
    v = mesh.vertices[mesh.triangles[tri]]
    pts = b0[:, None] * v[:, 0] + b1[:, None] * v[:, 1] + b2[:, None] * v[:, 2]
    return pts, tri


def sample_surface(
    mesh: TriangleMesh, weights: CurvatureWeights | None = None, n: int = DEFAULT_N, seed: int = 0, workers: int = 1
) -> PointSampleSet:
    """Triangles drawn proportionally to curvature weight, points uniform inside."""
    if mesh.is_empty():
        raise ValueError("cannot sample an empty mesh")
    weights = weights or compute_curvature(mesh)
    probs = weights.probabilities()
    fn = mesh.face_normals()

    def chunk(i, s, e):
        return _surface_points(mesh, probs, _chunk_rng(seed, "SURFACE", i), e - s)

    parts = _chunked(n, chunk, workers)
    pts = np.concatenate([p for p, _ in parts])
    tri = np.concatenate([t for _, t in parts])
    meta = {
        "weight_min": float(weights.weights.min()),
        "weight_max": float(weights.weights.max()),
        "weight_sum": float(weights.weights.sum()),
        "defect_floor": weights.floor,
    }
    return PointSampleSet("SURFACE", pts, seed, normals=fn[tri], triangle_index=tri, meta=meta)


def _truncated_gaussian(rng: np.random.Generator, m: int, sigma: float) -> np.ndarray:
    """Isotropic 3-D Gaussian conditioned on ``|x| <= 3 sigma`` (rejection)."""
    out = rng.normal(0.0, sigma, size=(m, 3))
    bad = np.flatnonzero(np.einsum("ij,ij->i", out, out) > (3 * sigma) ** 2)
    while len(bad):
        out[bad] = rng.normal(0.0, sigma, size=(len(bad), 3))
        bad = bad[np.einsum("ij,ij->i", out[bad], out[bad]) > (3 * sigma) ** 2]
    return out


def sample_near_surface(
    mesh: TriangleMesh,
    weights: CurvatureWeights | None = None,
    n: int = DEFAULT_N,
    bias: float = DEFAULT_BIAS,
    seed: int = 0,
    workers: int = 1,
) -> PointSampleSet:
    """Area-uniform surface points plus a truncated Gaussian offset (sigma = ``bias``).

    ``weights`` overrides the area-uniform triangle choice when given.
    """
    if not bias > 0:
        raise ValueError("bias must be positive")
    if mesh.is_empty():
        raise ValueError("cannot sample an empty mesh")
    areas = mesh.triangle_areas()
    probs = weights.probabilities() if weights is not None else areas / areas.sum()
    fn = mesh.face_normals()

    def chunk(i, s, e):
        rng = _chunk_rng(seed, "NEAR_SURFACE", i)
        p, t = _surface_points(mesh, probs, rng, e - s)
        return p, t, _truncated_gaussian(rng, e - s, bias)

    parts = _chunked(n, chunk, workers)
    base = np.concatenate([p for p, _, _ in parts])
    tri = np.concatenate([t for _, t, _ in parts])
    disp = np.concatenate([d for _, _, d in parts])
    meta = {"bias": bias, "truncation": 3 * bias, "distribution": "isotropic gaussian, norm truncated at 3 sigma"}
    return PointSampleSet(
        "NEAR_SURFACE", base + disp, seed, normals=fn[tri], displacement=disp, triangle_index=tri, meta=meta
    )


def sample_all(
    mesh: TriangleMesh, n: int = DEFAULT_N, seed: int = 0, bias: float = DEFAULT_BIAS, workers: int = 1
) -> dict:
    w = compute_curvature(mesh)
    return {
        "space": sample_space(mesh, n, seed, workers),
        "surface": sample_surface(mesh, w, n, seed, workers),
        "near_surface": sample_near_surface(mesh, None, n, bias, seed, workers),
    }


def write_samples(outdir, groups: dict) -> dict:
    """``<name>.ply`` plus ``<name>.json`` per group; returns written paths."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, s in groups.items():
        ply = out / f"{name}.ply"
        ply.write_bytes(s.to_ply())
        side = out / f"{name}.json"
        side.write_text(json.dumps(s.sidecar(), indent=2, sort_keys=True) + "\n")
        paths[name] = [str(ply), str(side)]
    return paths
