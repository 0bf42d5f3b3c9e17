"""Smallest enclosing sphere (randomized Welzl, move-to-front) and
unit-sphere normalization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from ..mesh import TriangleMesh

_REL = 1e-12


@dataclass(frozen=True)
class BoundingSphere:
    center: np.ndarray
    radius: float

    def contains(self, points, rel: float = 1e-9) -> np.ndarray:
        d = np.linalg.norm(np.asarray(points, dtype=np.float64).reshape(-1, 3) - self.center, axis=1)
        return d <= self.radius * (1 + rel) + rel


def circumsphere(support) -> tuple:
    """Smallest sphere with every support point on its boundary.

    For 2-4 affinely independent points the center lies in their affine hull.
    Returns ``(center, radius)``; degenerate supports fall back to least squares.
    """
    s = np.asarray(support, dtype=np.float64).reshape(-1, 3)
    p0 = s[0]
    if len(s) == 1:
        return p0.copy(), 0.0
    A = s[1:] - p0
    rhs = 0.5 * np.einsum("ij,ij->i", A, A)
    M = A @ A.T
    try:
        lam = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        lam = np.linalg.lstsq(M, rhs, rcond=None)[0]
    c = p0 + lam @ A
    r = float(np.sqrt(max(np.max(np.sum((s - c) ** 2, axis=1)), 0.0)))
    return c, r


def _mtf(pts: list, end: int, support: list, ball: list) -> None:
    """Move-to-front Welzl over ``pts[:end]`` with ``support`` fixed on the boundary."""
    c, r = circumsphere(support) if support else (np.asarray(pts[0], dtype=np.float64), -1.0)
    ball[0], ball[1] = c, r
    if len(support) == 4:
        return
    i = 0
    while i < end:
        p = pts[i]
        c, r = ball
        d = p - c
        if r < 0 or d @ d > r * r * (1 + _REL) + _REL * _REL:
            support.append(p)
            _mtf(pts, i, support, ball)
            support.pop()
            if i > 0:
                pts.insert(0, pts.pop(i))
        i += 1


def welzl_sphere(points, seed: int = 0) -> BoundingSphere:
    """Exact minimal enclosing sphere.

    Points are first reduced to their convex-hull vertices (the hull has the
    same enclosing sphere), then shuffled with ``seed`` and processed by the
    move-to-front variant of Welzl's algorithm.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("welzl_sphere needs at least one point")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    pts = np.unique(pts, axis=0)
    if len(pts) > 64:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:
            pass  # flat or degenerate input: keep all points
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pts))
    work = [pts[i] for i in order]
    ball = [None, -1.0]
    _mtf(work, len(work), [], ball)
    return BoundingSphere(np.asarray(ball[0], dtype=np.float64), max(float(ball[1]), 0.0))


@dataclass(frozen=True)
class Transform:
    """``normalized = (p - center) * scale``."""

    center: np.ndarray
    scale: float

    def apply(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.center) * self.scale

    def invert(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale + self.center

    def as_dict(self) -> dict:
        return {"center": [float(c) for c in self.center], "scale": float(self.scale)}


def normalize_to_unit_sphere(mesh: TriangleMesh, seed: int = 0) -> tuple:
    """Translate the Welzl center to the origin and scale the radius to 1."""
    if mesh.n_vertices == 0:
        raise ValueError("cannot normalize an empty mesh")
    bs = welzl_sphere(mesh.vertices, seed)
    if bs.radius <= 0:
        raise ValueError("all vertices coincide; bounding radius is zero")
    tf = Transform(bs.center, 1.0 / bs.radius)
    out = TriangleMesh(tf.apply(mesh.vertices), mesh.triangles.copy(), mesh.normals, dict(mesh.meta))
    return out, tf
