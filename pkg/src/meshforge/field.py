"""Implicit scalar fields evaluated on batches of points.

Sign convention everywhere: negative strictly inside, positive strictly
outside, zero on the surface.  Fields are immutable after construction, so a
single instance may be evaluated from many threads at once.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

DEFAULT_BOUNDS = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))


class ScalarField:
    """Base class for batched point queries.

    Subclasses implement ``_evaluate(points)`` for an (n, 3) float64 array and
    may set ``lipschitz`` to a known bound on the gradient norm.  The extractor
    uses that bound to certify signs without querying.
    """

    lipschitz: float | None = None

    def __init__(self, bounds=DEFAULT_BOUNDS):
        lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
            raise ValueError("bounds must be two 3-vectors with lo < hi")
        self.bounds = (lo, hi)

    def __call__(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"expected an (n, 3) batch of points, got shape {pts.shape}")
        return self._evaluate(pts)

    evaluate = __call__

    def _evaluate(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def evaluate_parallel(field: ScalarField, points, workers: int = 4, chunk: int = 65536) -> np.ndarray:
    """Evaluate ``points`` in chunks on a thread pool.

    Every field here is row-wise, so the result is bitwise identical to a
    single sequential call.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if workers <= 1 or len(pts) <= chunk:
        return field(pts)
    parts = [pts[i : i + chunk] for i in range(0, len(pts), chunk)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return np.concatenate(list(pool.map(field, parts)))


class SphereField(ScalarField):
    lipschitz = 1.0

    def __init__(self, center=(0.0, 0.0, 0.0), radius=1.0, bounds=DEFAULT_BOUNDS):
        super().__init__(bounds)
        if not radius > 0:
            raise ValueError(f"radius must be positive, got {radius}")
        self.center = np.asarray(center, dtype=np.float64).reshape(3)
        self.radius = float(radius)

    def _evaluate(self, pts):
        d = pts - self.center
        return np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]) - self.radius

    def __repr__(self):
        return f"SphereField(center={self.center.tolist()}, radius={self.radius})"


class TorusField(ScalarField):
    """Exact torus distance, symmetry axis along z."""

    lipschitz = 1.0

    def __init__(self, major_radius=0.6, minor_radius=0.25, bounds=DEFAULT_BOUNDS):
        super().__init__(bounds)
        if not 0 < minor_radius < major_radius:
            raise ValueError("torus needs 0 < minor_radius < major_radius")
        self.major_radius = float(major_radius)
        self.minor_radius = float(minor_radius)

    def _evaluate(self, pts):
        x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
        q = np.sqrt(x * x + y * y) - self.major_radius
        return np.sqrt(q * q + z * z) - self.minor_radius

    def __repr__(self):
        return f"TorusField(major_radius={self.major_radius}, minor_radius={self.minor_radius})"


class _CSG(ScalarField):
    op = None

    def __init__(self, a: ScalarField, b: ScalarField):
        lo = np.minimum(a.bounds[0], b.bounds[0])
        hi = np.maximum(a.bounds[1], b.bounds[1])
        super().__init__((lo, hi))
        self.a, self.b = a, b
        if a.lipschitz is not None and b.lipschitz is not None:
            self.lipschitz = max(a.lipschitz, b.lipschitz)

    def _evaluate(self, pts):
        return self.op(self.a(pts), self.b(pts))


class UnionField(_CSG):
    op = staticmethod(np.minimum)


class IntersectionField(_CSG):
    op = staticmethod(np.maximum)


def sphere_field(center=(0.0, 0.0, 0.0), radius=1.0) -> SphereField:
    return SphereField(center, radius)


def torus_field(major_radius: float, minor_radius: float) -> TorusField:
    return TorusField(major_radius, minor_radius)


def csg_union(a: ScalarField, b: ScalarField) -> UnionField:
    return UnionField(a, b)


def csg_intersection(a: ScalarField, b: ScalarField) -> IntersectionField:
    return IntersectionField(a, b)


class GridField(ScalarField):
    """Trilinear interpolation of values stored at voxel centers.

    Voxel ``(i, j, k)`` has its center at ``origin + (index + 0.5) * voxel_size``.
    The lattice is padded by one layer of ``+truncation`` so the field stays
    continuous; beyond the padding every query returns ``+truncation``.
    """

    def __init__(self, values, origin, voxel_size: float, truncation: float):
        vals = np.asarray(values, dtype=np.float64)
        if vals.ndim != 3 or vals.size == 0:
            raise ValueError("grid values must be a non-empty 3-D array")
        if min(vals.shape) < 2:
            raise ValueError("grid needs at least 2 voxels per axis")
        self.resolution = tuple(int(n) for n in vals.shape)
        self.origin = np.asarray(origin, dtype=np.float64).reshape(3)
        self.voxel_size = float(voxel_size)
        self.truncation = float(truncation)
        self.values = vals
        self._padded = np.pad(vals, 1, constant_values=self.truncation)
        # center of padded index 0
        self._base = self.origin - 0.5 * self.voxel_size
        hi = self._base + (np.asarray(self._padded.shape) - 1) * self.voxel_size
        super().__init__((self._base, hi))
        grads = [np.abs(np.diff(self._padded, axis=a)).max(initial=0.0) for a in range(3)]
        self.lipschitz = float(np.sqrt(sum(g * g for g in grads))) / self.voxel_size

    def _evaluate(self, pts):
        u = (pts - self._base) / self.voxel_size
        r = np.rint(u)
        u = np.where(np.abs(u - r) < 1e-9, r, u)
        shape = np.asarray(self._padded.shape)
        inside = np.all((u >= 0) & (u <= shape - 1), axis=1)
        out = np.full(len(pts), self.truncation)
        if not inside.any():
            return out
        u = u[inside]
        i0 = np.minimum(np.floor(u).astype(np.int64), shape - 2)
        f = u - i0
        g = self._padded
        x0, y0, z0 = i0[:, 0], i0[:, 1], i0[:, 2]
        fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
        c00 = g[x0, y0, z0] * (1 - fx) + g[x0 + 1, y0, z0] * fx
        c10 = g[x0, y0 + 1, z0] * (1 - fx) + g[x0 + 1, y0 + 1, z0] * fx
        c01 = g[x0, y0, z0 + 1] * (1 - fx) + g[x0 + 1, y0, z0 + 1] * fx
        c11 = g[x0, y0 + 1, z0 + 1] * (1 - fx) + g[x0 + 1, y0 + 1, z0 + 1] * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        out[inside] = c0 * (1 - fz) + c1 * fz
        return out

    def voxel_centers(self) -> np.ndarray:
        idx = np.indices(self.resolution).reshape(3, -1).T
        return self.origin + (idx + 0.5) * self.voxel_size


def grid_field_from_volume(volume) -> GridField:
    """Wrap anything carrying ``values``, ``origin``, ``voxel_size`` and ``truncation``."""
    values = np.asarray(volume.values)
    if values.size == 0:
        raise ValueError("empty volume")
    return GridField(values, volume.origin, volume.voxel_size, volume.truncation)


def parse_field_spec(text: str) -> ScalarField:
    """Parse CLI shorthands: ``sphere:R``, ``sphere:R:cx,cy,cz``, ``torus:R:r``,
    ``union:R:dx`` (two spheres at ``±dx`` on x)."""
    kind, *args = text.split(":")
    try:
        if kind == "sphere":
            center = tuple(float(c) for c in args[1].split(",")) if len(args) > 1 else (0, 0, 0)
            return SphereField(center, float(args[0]))
        if kind == "torus":
            return TorusField(float(args[0]), float(args[1]))
        if kind == "union":
            r, dx = float(args[0]), float(args[1])
            return UnionField(SphereField((-dx, 0, 0), r), SphereField((dx, 0, 0), r))
    except (IndexError, ValueError) as exc:
        raise ValueError(f"bad field description {text!r}: {exc}") from None
    raise ValueError(f"unknown field kind {kind!r} (expected sphere, torus or union)")
