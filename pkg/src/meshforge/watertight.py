"""Watertight envelopes via multi-view depth rendering and TSDF fusion.

Pipeline: orthographic depth maps from many directions, a morphological
closing per map, truncated signed-distance fusion into a voxel grid, a
half-voxel outward bias, and re-extraction through the sparse isosurface
extractor.  Only geometry visible from outside contributes, so interior
shells and cavities disappear.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .isosurface.march import Grid
from .isosurface.sparse import march_lattice
from .mesh import TriangleMesh
from .meshkit.primitives import icosahedron, subdivide

EXTENT = 1.05  # half side of the render frame and of the fused volume
MAGIC = b"P3VL"
VERSION = 1
_VHEADER = struct.Struct("<4sB3I3fff")
_RASTER_CHUNK = 1 << 22
_EDGE_EPS = 1e-9


def view_directions(n: int = 42) -> np.ndarray:
    """Unit view directions.  42 gives the vertices of a once-subdivided
    icosahedron, 12 the icosahedron itself; other counts use a Fibonacci lattice."""
    if n == 12:
        return icosahedron().vertices.copy()
    if n == 42:
        v = subdivide(icosahedron(), project_radius=1.0).vertices
        return v.copy()
    if n < 1:
        raise ValueError("need at least one view")
    k = np.arange(n) + 0.5
    z = 1 - 2 * k / n
    r = np.sqrt(1 - z * z)
    phi = np.pi * (1 + 5**0.5) * k
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _frame(direction):
    f = np.asarray(direction, dtype=np.float64).reshape(3)
    n = np.linalg.norm(f)
    if not n > 0:
        raise ValueError("view direction must be non-zero")
    f = f / n
    hint = np.array([0.0, 0.0, 1.0]) if abs(f[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    right = np.cross(hint, f)
    right /= np.linalg.norm(right)
    up = np.cross(f, right)
    return right, up, f


@dataclass
class DepthView:
    """Orthographic depth image.

    Pixel ``(i, j)`` is centred at ``(-EXTENT + (i + 0.5) * pixel_size)`` along
    ``right`` and likewise along ``up``.  Depth is measured along ``forward``
    from the near plane ``forward . p = -EXTENT``; ``inf`` marks no hit.
    """

    right: np.ndarray
    up: np.ndarray
    forward: np.ndarray
    resolution: int
    pixel_size: float
    depth: np.ndarray

    @property
    def direction(self) -> np.ndarray:
        return self.forward


def render_depth(mesh: TriangleMesh, direction, resolution: int = 512) -> DepthView:
    """Double-sided software rasterization of the nearest surface per pixel."""
    if resolution < 64:
        raise ValueError("depth resolution must be >= 64")
    right, up, fwd = _frame(direction)
    pix = 2 * EXTENT / resolution
    depth = np.full(resolution * resolution, np.inf)
    view = DepthView(right, up, fwd, resolution, pix, depth.reshape(resolution, resolution))
    if mesh.is_empty():
        return view
    V = mesh.vertices
    # continuous pixel coordinates: pixel centres at integers
    px = (V @ right + EXTENT) / pix - 0.5
    py = (V @ up + EXTENT) / pix - 0.5
    pz = V @ fwd + EXTENT
    t = mesh.triangles
    x, y, z = px[t], py[t], pz[t]
    area = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    x0 = np.clip(np.ceil(x.min(axis=1) - 1e-9), 0, resolution).astype(np.int64)
    x1 = np.clip(np.floor(x.max(axis=1) + 1e-9), -1, resolution - 1).astype(np.int64)
    y0 = np.clip(np.ceil(y.min(axis=1) - 1e-9), 0, resolution).astype(np.int64)
    y1 = np.clip(np.floor(y.max(axis=1) + 1e-9), -1, resolution - 1).astype(np.int64)
    w, h = x1 - x0 + 1, y1 - y0 + 1
    ok = (np.abs(area) > 1e-14) & (w > 0) & (h > 0)
    ids = np.flatnonzero(ok)
    counts = (w * h)[ids]
    ends = np.cumsum(counts)
    start = 0
    while start < len(ids):
        base = ends[start - 1] if start else 0
        stop = int(np.searchsorted(ends, base + _RASTER_CHUNK, side="right"))
        stop = max(stop, start + 1)
        tid = ids[start:stop]
        n = counts[start:stop]
        rep = np.repeat(np.arange(len(tid)), n)
        local = np.arange(int(n.sum())) - np.repeat(np.cumsum(n) - n, n)
        tr = tid[rep]
        ix = x0[tr] + local % w[tr]
        iy = y0[tr] + local // w[tr]
        xa, ya = x[tr], y[tr]
        inv = 1.0 / area[tr]
        l1 = ((ix - xa[:, 0]) * (ya[:, 2] - ya[:, 0]) - (xa[:, 2] - xa[:, 0]) * (iy - ya[:, 0])) * inv
        l2 = ((xa[:, 1] - xa[:, 0]) * (iy - ya[:, 0]) - (ix - xa[:, 0]) * (ya[:, 1] - ya[:, 0])) * inv
        l0 = 1 - l1 - l2
        inside = (l0 >= -_EDGE_EPS) & (l1 >= -_EDGE_EPS) & (l2 >= -_EDGE_EPS)
        za = z[tr[inside]]
        d = l0[inside] * za[:, 0] + l1[inside] * za[:, 1] + l2[inside] * za[:, 2]
        np.minimum.at(depth, ix[inside] * resolution + iy[inside], d)
        start = stop
    return view


def close_depth(view: DepthView, window: int = 3) -> DepthView:
    """Morphological closing of the hit region: holes narrower than the
    window are filled from their nearest neighbours, wider gaps stay open."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"closing window must be a positive odd integer, got {window}")
    if window == 1:
        return view
    g = np.where(np.isfinite(view.depth), -view.depth, -np.inf)
    g = ndimage.maximum_filter(g, size=window, mode="nearest")
    g = ndimage.minimum_filter(g, size=window, mode="nearest")
    depth = np.where(np.isfinite(g), -g, np.inf)
    return DepthView(view.right, view.up, view.forward, view.resolution, view.pixel_size, depth)


@dataclass
class TsdfVolume:
    """Voxel ``(i, j, k)`` is centred at ``origin + (index + 0.5) * voxel_size``."""

    values: np.ndarray
    weights: np.ndarray
    origin: np.ndarray
    voxel_size: float
    truncation: float

    @property
    def resolution(self) -> tuple:
        return tuple(self.values.shape)

    def voxel_centers_1d(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.values.shape[axis]) + 0.5) * self.voxel_size


_MIN_COS = 0.05


def _view_cosine(view: DepthView) -> np.ndarray:
    """Per-pixel |cos| between the view ray and the surface normal, from the
    depth gradient.  Each axis uses the flatter of the two one-sided
    differences so a depth discontinuity does not read as a grazing surface."""
    d = view.depth
    slopes = []
    for axis in (0, 1):
        with np.errstate(invalid="ignore"):
            fwd = np.diff(d, axis=axis, append=np.take(d, [-1], axis=axis))
            bwd = np.diff(d, axis=axis, prepend=np.take(d, [0], axis=axis))
            fwd = np.where(np.isfinite(fwd), np.abs(fwd), np.inf)
            bwd = np.where(np.isfinite(bwd), np.abs(bwd), np.inf)
        g = np.minimum(fwd, bwd)
        g[~np.isfinite(g)] = 0.0  # isolated pixel: no slope information
        slopes.append(g / view.pixel_size)
    cos = 1.0 / np.sqrt(1.0 + slopes[0] ** 2 + slopes[1] ** 2)
    return np.maximum(cos, _MIN_COS)


def fuse(views: list, resolution: int = 256, truncation: float | None = None, bias: bool = True) -> TsdfVolume:
    """Fuse depth views into a TSDF over ``[-EXTENT, EXTENT]^3``.

    Per view, a voxel whose pixel hits the surface gets the signed distance
    ``(depth(pixel) - depth(voxel)) * cos``, where ``cos`` comes from the depth
    gradient and turns the distance along the ray into a distance along the
    surface normal.  The half-voxel bias is subtracted next, which moves the
    surface outward by half a voxel.  Values of at least ``-delta`` are
    clamped to ``+delta`` from above and averaged with weight 1.  A voxel
    hidden more than ``delta`` behind the surface in every view that hits it
    is interior and gets ``-delta``.  Pixels with no hit say nothing about
    distance; voxels without a single hit keep ``+delta``.  Weight counts
    every view whose frame contains the voxel, so weight 0 means unobserved.
    """
    if len(views) == 0:
        raise ValueError("fusion needs at least one view")
    if len(views) < 4:
        raise ValueError(f"fusion needs at least 4 views, got {len(views)}")
    n = int(resolution)
    vs = 2 * EXTENT / n
    delta = 3 * vs if truncation is None else float(truncation)
    if not delta > 0:
        raise ValueError("truncation must be positive")
    shift = 0.5 * vs if bias else 0.0
    c = -EXTENT + (np.arange(n) + 0.5) * vs
    acc = np.zeros((n, n, n))
    w_near = np.zeros((n, n, n), dtype=np.uint16)
    w_far = np.zeros((n, n, n), dtype=np.uint16)
    w_seen = np.zeros((n, n, n), dtype=np.uint16)
    slab = max(1, (1 << 21) // (n * n))
    for view in views:
        r, u, f = view.right, view.up, view.forward
        res, pix = view.resolution, view.pixel_size
        img = view.depth.ravel()
        cos = _view_cosine(view).ravel()
        for s in range(0, n, slab):
            xs = c[s : s + slab, None, None]
            cy, cz = c[None, :, None], c[None, None, :]
            pu = (xs * r[0] + cy * r[1] + cz * r[2] + EXTENT) / pix
            pv = (xs * u[0] + cy * u[1] + cz * u[2] + EXTENT) / pix
            dv = xs * f[0] + cy * f[1] + cz * f[2] + EXTENT
            iu = np.floor(pu).astype(np.int64)
            iv = np.floor(pv).astype(np.int64)
            seen = (iu >= 0) & (iu < res) & (iv >= 0) & (iv < res)
            pid = np.clip(iu, 0, res - 1) * res + np.clip(iv, 0, res - 1)
            surf = img[pid]
            hit = seen & np.isfinite(surf)
            sd = np.where(hit, (surf - dv) * cos[pid], 0.0) - shift
            near = hit & (sd >= -delta)
            acc[s : s + slab] += np.where(near, np.minimum(sd, delta), 0.0)
            w_near[s : s + slab] += near
            w_far[s : s + slab] += hit & ~near
            w_seen[s : s + slab] += seen
    values = np.full((n, n, n), delta)
    has_near = w_near > 0
    values[has_near] = acc[has_near] / w_near[has_near]
    values[~has_near & (w_far > 0)] = -delta
    origin = np.full(3, -EXTENT)
    return TsdfVolume(values.astype(np.float32), w_seen.astype(np.float32), origin, float(vs), float(delta))


def volume_to_bytes(vol: TsdfVolume) -> bytes:
    nx, ny, nz = vol.values.shape
    head = _VHEADER.pack(MAGIC, VERSION, nx, ny, nz, *map(float, vol.origin), vol.voxel_size, vol.truncation)
    # x varies fastest on disk
    inter = np.stack([vol.values.astype("<f4"), vol.weights.astype("<f4")], axis=-1)
    return head + np.ascontiguousarray(inter.transpose(2, 1, 0, 3)).tobytes()


def volume_from_bytes(data: bytes) -> TsdfVolume:
    if len(data) < _VHEADER.size:
        raise ValueError("volume file shorter than its header")
    magic, version, nx, ny, nz, ox, oy, oz, vs, delta = _VHEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ValueError(f"unsupported volume version {version}")
    body = np.frombuffer(data, dtype="<f4", offset=_VHEADER.size)
    if body.size != nx * ny * nz * 2:
        raise ValueError("volume body size does not match its header")
    arr = body.reshape(nz, ny, nx, 2).transpose(2, 1, 0, 3)
    return TsdfVolume(
        np.ascontiguousarray(arr[..., 0]),
        np.ascontiguousarray(arr[..., 1]),
        np.array([ox, oy, oz], dtype=np.float64),
        float(vs),
        float(delta),
    )


def save_volume(path, vol: TsdfVolume) -> None:
    with open(path, "wb") as fh:
        fh.write(volume_to_bytes(vol))


def load_volume(path) -> TsdfVolume:
    with open(path, "rb") as fh:
        return volume_from_bytes(fh.read())


def render_views(mesh: TriangleMesh, directions, resolution: int = 512, window: int = 3, workers: int = 1) -> list:
    def one(d):
        return close_depth(render_depth(mesh, d, resolution), window)

    if workers <= 1:
        return [one(d) for d in directions]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, directions))


def volume_to_mesh(vol: TsdfVolume) -> TriangleMesh:
    """Extract the zero level of a fused volume.

    Lattice vertices sit on voxel centres, with one extra layer of ``+delta``
    on every side so the envelope closes even where it touches the frame.
    TSDF values are clamped to ``+-delta``, so a distance-based activity test
    cannot prune cells safely here; every cell is marched.
    """
    n = vol.values.shape[0]
    if vol.values.shape != (n, n, n):
        raise ValueError(f"volume must be cubic, got shape {vol.values.shape}")
    vals = np.pad(vol.values.astype(np.float64), 1, constant_values=vol.truncation)
    lo = vol.origin - 0.5 * vol.voxel_size
    grid = Grid(n + 1, (tuple(lo), tuple(lo + (n + 1) * vol.voxel_size)))
    return march_lattice(grid, vals)


def make_watertight(
    mesh: TriangleMesh,
    views: int = 42,
    depth_resolution: int = 512,
    volume_resolution: int = 256,
    window: int = 3,
    truncation: float | None = None,
    workers: int = 1,
    return_volume: bool = False,
):
    """Envelope of ``mesh`` (assumed normalized to the unit sphere)."""
    if mesh.n_vertices and np.abs(mesh.vertices).max() > EXTENT:
        raise ValueError("mesh extends beyond the render frame; normalize it first")
    dirs = view_directions(views)
    rendered = render_views(mesh, dirs, depth_resolution, window, workers)
    vol = fuse(rendered, volume_resolution, truncation)
    out = volume_to_mesh(vol)
    out.meta["watertight"] = {
        "views": int(views),
        "depth_resolution": int(depth_resolution),
        "volume_resolution": int(volume_resolution),
        "window": int(window),
        "truncation": vol.truncation,
        "voxel_size": vol.voxel_size,
    }
    if return_volume:
        return out, vol
    return out
