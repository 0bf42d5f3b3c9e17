"""Sparse coarse-to-fine isosurface extraction.

The coarsest level is evaluated densely.  Each later level only looks at the
children of cells that are active one level up; at the final resolution the
active set is dilated and marched.

When the field declares a Lipschitz bound ``L``, a vertex whose neighbour
``u`` satisfies ``|f(u)| > L * |u - v|`` gets its sign from ``u`` without a
query.  Marching cubes only needs exact values on the endpoints of
sign-changing edges (and on the corners of the few cells that need the
interior test), so the output is identical to dense marching while most
vertices near, but not on, the surface are never evaluated.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import ndimage

from ..field import DEFAULT_BOUNDS, ScalarField, evaluate_parallel
from ..mesh import TriangleMesh
from . import cases
from .march import Grid, corners_needing_values, march, needs_full_values, nudge, case_keys

_SAFETY = 1e-9  # relative slack on Lipschitz distances
_MARGIN = 1e-12  # absolute slack so rounding never flips an inferred sign


def _is_pow2(n) -> bool:
    return isinstance(n, (int, np.integer)) and n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class ExtractionConfig:
    final_resolution: int = 256
    coarse_resolution: int = 32
    activity_margin: float = 1.0
    expansion_radius: int = 1
    bounds: tuple = DEFAULT_BOUNDS
    # None: use the field's own bound; 0 disables sign inference
    lipschitz: float | None = None
    workers: int = 1

    def __post_init__(self):
        D, d0 = self.final_resolution, self.coarse_resolution
        if not _is_pow2(D) or D < 32:
            raise ValueError(f"final_resolution must be a power of two >= 32, got {D}")
        if not _is_pow2(d0):
            raise ValueError(f"coarse_resolution must be a power of two, got {d0}")
        if d0 * 4 > D:
            raise ValueError(f"coarse_resolution {d0} must be <= final_resolution / 4")
        if not self.activity_margin > 0:
            raise ValueError("activity_margin must be positive")
        if self.expansion_radius < 0:
            raise ValueError("expansion_radius must be >= 0")
        lo, hi = (np.asarray(b, dtype=np.float64) for b in self.bounds)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
            raise ValueError("bounds must be two 3-vectors with lo < hi")

    @property
    def levels(self) -> list:
        out, d = [], self.coarse_resolution
        while d <= self.final_resolution:
            out.append(d)
            d *= 2
        return out


@dataclass
class ActiveCellSet:
    """Cell coordinates at one level, unique and sorted by linear index."""

    resolution: int
    cells: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.cells, dtype=np.int64).reshape(-1, 3)
        if len(c) and (c.min() < 0 or c.max() >= self.resolution):
            raise ValueError("cell outside the level's index range")
        keys = _cell_keys(c, self.resolution)
        uniq, first = np.unique(keys, return_index=True)
        if len(uniq) != len(keys):
            raise ValueError("duplicate cells")
        self.cells = c[first]

    def __len__(self):
        return len(self.cells)

    def keys(self) -> np.ndarray:
        return _cell_keys(self.cells, self.resolution)


def _cell_keys(cells, res):
    cells = np.asarray(cells, dtype=np.int64)
    return (cells[..., 0] * res + cells[..., 1]) * res + cells[..., 2]


def _cells_from_keys(keys, res):
    keys = np.asarray(keys, dtype=np.int64)
    return np.stack([keys // (res * res), (keys // res) % res, keys % res], axis=-1)


@dataclass
class ExtractionStats:
    field_queries_total: int = 0
    field_queries_dense_equivalent: int = 0
    cells_active_per_level: list = dc_field(default_factory=list)
    queries_per_level: list = dc_field(default_factory=list)
    wall_time: float = 0.0
    empty: bool = False
    diagnostic: str | None = None

    @property
    def reduction(self) -> float:
        return self.field_queries_dense_equivalent / max(self.field_queries_total, 1)

    def as_dict(self) -> dict:
        return {
            "queries_total": self.field_queries_total,
            "dense_equivalent": self.field_queries_dense_equivalent,
            "per_level_active": list(self.cells_active_per_level),
            "per_level_queries": list(self.queries_per_level),
            "wall_time_s": self.wall_time,
            "reduction": self.reduction,
            "empty": self.empty,
            "diagnostic": self.diagnostic,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)


class _Counter:
    """Counts and caches every field query, keyed by fine-grid vertex."""

    def __init__(self, field: ScalarField, grid: Grid, workers: int):
        self.field, self.grid, self.workers = field, grid, workers
        self.count = 0
        self.keys = np.zeros(0, dtype=np.int64)
        self.vals = np.zeros(0)

    def lookup(self, keys):
        out = np.full(len(keys), np.nan)
        if len(self.keys):
            pos = np.minimum(np.searchsorted(self.keys, keys), len(self.keys) - 1)
            hit = self.keys[pos] == keys
            out[hit] = self.vals[pos[hit]]
        return out

    def values(self, keys) -> np.ndarray:
        """Exact values for fine keys, querying only the ones never seen."""
        keys = np.asarray(keys, dtype=np.int64)
        uniq, inv = np.unique(keys, return_inverse=True)
        vals = self.lookup(uniq)
        miss = np.isnan(vals)
        if miss.any():
            new = evaluate_parallel(self.field, self.grid.points(self.grid.unkey(uniq[miss])), self.workers)
            vals[miss] = new
            self.count += int(miss.sum())
            allk = np.concatenate([self.keys, uniq[miss]])
            order = np.argsort(allk, kind="stable")
            self.keys = allk[order]
            self.vals = np.concatenate([self.vals, new])[order]
        return vals[inv.reshape(-1)]


# -- brick geometry --------------------------------------------------------------
_OFF27 = np.array([(i, j, k) for k in range(3) for j in range(3) for i in range(3)], dtype=np.int64)
_CLASS27 = (_OFF27 % 2).sum(axis=1)
_CORNER_POS = np.array([2 * c[0] + 6 * c[1] + 18 * c[2] for c in cases.CORNERS])
_CHILD_OFF = cases.CORNERS.copy()
_CHILD_CORNER_POS = np.array(
    [[(o[0] + c[0]) + 3 * (o[1] + c[1]) + 9 * (o[2] + c[2]) for c in cases.CORNERS] for o in _CHILD_OFF]
)


def _neighbour_table(cls):
    """Positions of class ``cls`` and their lower-class neighbours in a brick."""
    targets = np.flatnonzero(_CLASS27 == cls)
    nb = []
    for p in targets:
        d = np.abs(_OFF27 - _OFF27[p]).max(axis=1)
        nb.append(np.flatnonzero((d == 1) & (_CLASS27 < cls)))
    width = max(len(n) for n in nb)
    table = np.full((len(targets), width), -1, dtype=np.int64)
    for i, n in enumerate(nb):
        table[i, : len(n)] = n
    return targets, table


_NEIGHBOURS = {c: _neighbour_table(c) for c in (1, 2, 3)}


@dataclass
class _Level:
    """Cells at one level with per-corner sign, lower bound on |f| and exact value."""

    res: int
    cells: np.ndarray
    sign: np.ndarray
    lb: np.ndarray
    val: np.ndarray


def _infer(sign, lb, known, targets, table, step, L):
    """Fill ``targets`` rows from known neighbour rows using the Lipschitz bound.

    Arrays are position-major, shape (27, n).
    """
    for t, nbs in zip(targets, table):
        best = np.full(sign.shape[1], -np.inf)
        bsign = np.zeros(sign.shape[1], dtype=bool)
        for nb in nbs[nbs >= 0]:
            off = (_OFF27[nb] - _OFF27[t]) * step
            d = float(np.sqrt((off * off).sum())) * L * (1 + _SAFETY)
            nlb = lb[nb]
            cand = nlb - d
            ok = known[nb] & (cand > _MARGIN * (1 + nlb)) & (cand > best)
            best = np.where(ok, cand, best)
            bsign = np.where(ok, sign[nb], bsign)
        got = np.isfinite(best)
        sign[t] = np.where(got, bsign, sign[t])
        lb[t] = np.where(got, best, lb[t])
        known[t] |= got


def _fill_exact(sign, lb, val, known, mask, keys, counter):
    """Query (or read from cache) exact values for ``mask`` entries."""
    if not mask.any():
        return
    v = counter.values(keys[mask])
    val[mask] = v
    lb[mask] = np.abs(v)
    sign[mask] = v >= 0
    known[mask] = True


def _bricks(parent: _Level, grid: Grid, scale: int, counter: _Counter, L: float | None, defer=False):
    """Sign/lb/val for the 27 level-(l+1) vertices spanned by each parent cell.

    Returned arrays have shape (n, 27) (views of position-major storage).
    With ``defer`` the vertices that cannot be inferred are left unknown
    instead of being queried straight away.
    """
    n = len(parent.cells)
    idx = 2 * parent.cells.T[None, :, :] + _OFF27[:, :, None]
    keys = grid.key(np.moveaxis(idx * scale, 1, -1))
    sign = np.zeros((27, n), dtype=bool)
    lb = np.zeros((27, n))
    val = np.full((27, n), np.nan)
    known = np.zeros((27, n), dtype=bool)
    sign[_CORNER_POS] = parent.sign.T
    lb[_CORNER_POS] = parent.lb.T
    val[_CORNER_POS] = parent.val.T
    known[_CORNER_POS] = True
    step = grid.step * scale
    for cls in (1, 2, 3):
        targets, table = _NEIGHBOURS[cls]
        if L:
            _infer(sign, lb, known, targets, table, step, L)
        if defer:
            continue
        missing = np.zeros((27, n), dtype=bool)
        missing[targets] = ~known[targets]
        _fill_exact(sign, lb, val, known, missing, keys, counter)
    return keys.T, sign.T, lb.T, val.T, known.T


def _active(sign, lb, tau, diag):
    change = sign.any(axis=-1) & ~sign.all(axis=-1)
    return change | (lb.min(axis=-1) <= tau * diag)


def subdivide_active(
    coarse: ActiveCellSet,
    field: ScalarField,
    tau: float = 1.0,
    bounds=DEFAULT_BOUNDS,
    counter: _Counter | None = None,
) -> ActiveCellSet:
    """Children of every coarse cell whose corners change sign or come within
    ``tau`` cell diagonals of zero.  Each grid vertex is evaluated once."""
    grid = Grid(coarse.resolution, bounds)
    c = counter or _Counter(field, grid, 1)
    corner_idx = coarse.cells[:, None, :] + cases.CORNERS[None]
    v = c.values(grid.key(corner_idx).ravel()).reshape(-1, 8)
    keep = _active(v >= 0, np.abs(v), tau, grid.cell_diagonal)
    parents = coarse.cells[keep]
    children = (2 * parents[:, None, :] + cases.CORNERS[None]).reshape(-1, 3)
    return ActiveCellSet(coarse.resolution * 2, children)


def expand_active(finest: ActiveCellSet, radius: int) -> ActiveCellSet:
    """26-connected dilation by ``radius`` cells, clipped to the grid."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0 or len(finest) == 0:
        return ActiveCellSet(finest.resolution, finest.cells.copy())
    res = finest.resolution
    cells = finest.cells
    for axis in range(3):
        parts = []
        for k in range(-radius, radius + 1):
            s = cells.copy()
            s[:, axis] += k
            parts.append(s[(s[:, axis] >= 0) & (s[:, axis] < res)])
        cells = _cells_from_keys(np.unique(_cell_keys(np.concatenate(parts), res)), res)
    return ActiveCellSet(res, cells)


class _Members:
    """Fast membership test for a set of cells at one level."""

    _DENSE_LIMIT = 1 << 27

    def __init__(self, cells, res):
        self.res = res
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, 3)
        if res**3 <= self._DENSE_LIMIT:
            self.mask = np.zeros((res,) * 3, dtype=bool)
            self.mask[cells[:, 0], cells[:, 1], cells[:, 2]] = True
            self.keys = None
        else:
            self.mask = None
            self.keys = np.unique(_cell_keys(cells, res))

    def __call__(self, cells) -> np.ndarray:
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, 3)
        ok = np.all((cells >= 0) & (cells < self.res), axis=1)
        out = np.zeros(len(cells), dtype=bool)
        c = cells[ok]
        if self.mask is not None:
            out[ok] = self.mask[c[:, 0], c[:, 1], c[:, 2]]
        elif len(self.keys):
            k = _cell_keys(c, self.res)
            at = np.minimum(np.searchsorted(self.keys, k), len(self.keys) - 1)
            out[ok] = self.keys[at] == k
        return out

    def dilated_ring(self, cells, reach) -> np.ndarray:
        """Cells within ``reach`` (Chebyshev) of ``cells`` but not in the set."""
        if self.mask is not None:
            grown = ndimage.maximum_filter(self.mask.view(np.uint8), size=2 * reach + 1, mode="constant")
            return np.argwhere(grown.astype(bool) & ~self.mask).astype(np.int64)
        grown = expand_active(ActiveCellSet(self.res, cells), reach).cells
        return grown[~self(grown)]


def _or_shifted(out, m, axis, s):
    """``out[i] |= m[i + s]`` along ``axis`` where ``i + s`` is in range."""
    n = m.shape[axis]
    if abs(s) >= n:
        return
    dst = [slice(None)] * 3
    src = [slice(None)] * 3
    dst[axis] = slice(max(0, -s), n - max(0, s))
    src[axis] = slice(max(0, s), n + min(0, s))
    out[tuple(dst)] |= m[tuple(src)]


def _expansion_ring(parents: np.ndarray, pres: int, radius: int, members: _Members | None = None):
    """Cells within ``radius`` of the children of ``parents`` that are not children
    themselves, with the index of their (inactive) parent in the returned list."""
    empty = np.zeros((0, 3), dtype=np.int64)
    if radius == 0 or len(parents) == 0:
        return empty, empty
    members = members or _Members(parents, pres)
    if members.mask is not None:
        kids, owner = [], []
        for o in cases.CORNERS:
            cov = members.mask
            for a in range(3):
                acc = np.zeros_like(cov)
                for s in range((o[a] - radius) // 2, (o[a] + radius) // 2 + 1):
                    _or_shifted(acc, cov, a, s)
                cov = acc
            rp = np.argwhere(cov & ~members.mask).astype(np.int64)
            kids.append(2 * rp + o)
            owner.append(rp)
        return np.concatenate(kids), np.concatenate(owner)
    rp = members.dilated_ring(parents, (radius + 1) // 2)
    kids = (2 * rp[:, None, :] + cases.CORNERS[None]).reshape(-1, 3)
    lo = (kids - radius) // 2
    hi = (kids + radius) // 2
    near = np.zeros(len(kids), dtype=bool)
    for off in np.ndindex(*(int(s) + 1 for s in (hi - lo).max(axis=0))):
        cand = lo + np.array(off)
        todo = ~near & np.all(cand <= hi, axis=1)
        near[todo] = members(cand[todo])
    return kids[near], rp[np.repeat(np.arange(len(rp)), 8)[near]]


_OFF18 = np.array([o for o in np.ndindex(3, 3, 3) if 0 < sum(abs(c - 1) for c in o) <= 2]) - 1


def _brick_neighbours():
    q = _OFF27[:, None, :] + _OFF18[None, :, :]
    ok = np.all((q >= 0) & (q <= 2), axis=-1)
    return np.where(ok, q[..., 0] + 3 * q[..., 1] + 9 * q[..., 2], -1)


_NB18 = _brick_neighbours()


class _Table:
    """Sorted unique vertices (fine keys) with sign, bound and exact value."""

    def __init__(self, keys, sign, lb, val):
        self.keys, self.sign, self.lb, self.val = keys, sign, lb, val
        self.known = np.isfinite(lb)

    @classmethod
    def from_bricks(cls, keys, sign, lb, val, known):
        k = keys.ravel()
        # int32 sorts noticeably faster and every key below 2**31 fits
        order = np.argsort(k.astype(np.int32) if len(k) and k.max() < 2**31 else k)
        sk = k[order]
        new = np.ones(len(sk), dtype=bool)
        new[1:] = sk[1:] != sk[:-1]
        start = np.flatnonzero(new)
        kn = known.ravel()[order]
        t = cls(
            sk[start],
            np.logical_or.reduceat(kn & sign.ravel()[order], start),
            np.maximum.reduceat(np.where(kn, lb.ravel()[order], -np.inf), start),
            np.fmax.reduceat(val.ravel()[order], start),
        )
        inv = np.empty(len(k), dtype=np.int64)
        inv[order] = np.cumsum(new) - 1
        return t, inv.reshape(keys.shape)

    def find(self, keys):
        at = np.minimum(np.searchsorted(self.keys, keys), max(len(self.keys) - 1, 0))
        hit = self.keys[at] == keys if len(self.keys) else np.zeros(len(keys), dtype=bool)
        return at, hit

    def propagate(self, grid, scale, L, rounds=2):
        """Infer unknown entries from known neighbours (face and edge adjacent)."""
        offs = _OFF18
        dist = np.sqrt(((offs * grid.step * scale) ** 2).sum(axis=1)) * L * (1 + _SAFETY)
        for _ in range(rounds):
            todo = np.flatnonzero(~self.known)
            if len(todo) == 0:
                return
            idx = grid.unkey(self.keys[todo]) // scale
            best = np.full(len(todo), -np.inf)
            bsign = np.zeros(len(todo), dtype=bool)
            for o, d in zip(offs, dist):
                nidx = idx + o
                inb = np.all((nidx >= 0) & (nidx * scale <= grid.res), axis=1)
                at, hit = self.find(grid.key(np.where(inb[:, None], nidx, 0) * scale))
                hit &= inb & self.known[at]
                nlb = self.lb[at]
                cand = np.where(hit, nlb - d, -np.inf)
                good = hit & (cand > _MARGIN * (1 + np.abs(nlb))) & (cand > best)
                best[good] = cand[good]
                bsign[good] = self.sign[at][good]
            got = np.isfinite(best)
            if not got.any():
                return
            self.sign[todo[got]] = bsign[got]
            self.lb[todo[got]] = best[got]
            self.known[todo[got]] = True

    def propagate_bricks(self, inv, step, L, rounds=1):
        """Like ``propagate`` but walks neighbours through the brick layout."""
        flat = inv.ravel()
        dist = np.sqrt(((_OFF18 * step) ** 2).sum(axis=1)) * L * (1 + _SAFETY)
        for _ in range(rounds):
            ent = np.flatnonzero(~self.known[flat])
            if len(ent) == 0:
                return
            pos = ent % 27
            base = ent - pos
            best = np.full(len(ent), -np.inf)
            bsign = np.zeros(len(ent), dtype=bool)
            for k, d in enumerate(dist):
                q = _NB18[pos, k]
                ok = q >= 0
                nv = flat[base + np.maximum(q, 0)]
                nlb = self.lb[nv]
                cand = nlb - d
                good = ok & self.known[nv] & (cand > _MARGIN * (1 + np.abs(nlb))) & (cand > best)
                best[good] = cand[good]
                bsign[good] = self.sign[nv][good]
            got = np.isfinite(best)
            if not got.any():
                return
            v = flat[ent[got]]
            vbest = np.full(len(self.keys), -np.inf)
            np.maximum.at(vbest, v, best[got])
            vpos = np.zeros(len(self.keys), dtype=bool)
            np.logical_or.at(vpos, v, bsign[got])
            upd = np.isfinite(vbest)
            self.sign[upd] = vpos[upd]
            self.lb[upd] = vbest[upd]
            self.known[upd] = True

    def query_unknown(self, counter):
        miss = ~self.known
        if miss.any():
            v = counter.values(self.keys[miss])
            self.val[miss], self.lb[miss], self.sign[miss] = v, np.abs(v), v >= 0
            self.known[miss] = True


def _ring_corners(ring, grid, scale, counter, L, tables):
    """Corner sign/val/keys for expansion cells, reusing every known vertex."""
    ckeys = grid.key((ring[:, None, :] + cases.CORNERS[None]) * scale)
    uk, inv = np.unique(ckeys.ravel(), return_inverse=True)
    inv = inv.reshape(-1, 8)
    t = _Table(uk, np.zeros(len(uk), dtype=bool), np.full(len(uk), -np.inf), np.full(len(uk), np.nan))
    idx = grid.unkey(uk) // scale
    for src, src_scale in tables:
        if src is None or len(src.keys) == 0:
            continue
        ratio = src_scale // scale
        # the corners of the source-level cell holding each vertex
        for off in np.ndindex(2, 2, 2):
            q = (idx + np.array(off) * (ratio - 1)) // ratio
            d = np.sqrt((((idx - q * ratio) * grid.step * scale) ** 2).sum(axis=1))
            at, hit = src.find(grid.key(np.minimum(q * src_scale, grid.res)))
            hit &= src.known[at]
            cand = np.where(hit, src.lb[at] - (L or 0) * d * (1 + _SAFETY), -np.inf)
            if not L:
                cand = np.where(hit & (d == 0), src.lb[at], -np.inf)
            good = hit & (cand > _MARGIN * (1 + src.lb[at])) & (cand > t.lb)
            exact = hit & (d == 0) & np.isfinite(src.val[at])
            t.sign[good] = src.sign[at][good]
            t.lb[good] = cand[good]
            t.val[exact] = src.val[at][exact]
    t.known = np.isfinite(t.lb)
    if L:
        t.propagate(grid, scale, L)
    t.query_unknown(counter)
    return ckeys, t.sign[inv], t.val[inv]


def _finish(grid, cells, sign, val, keys, counter):
    """Fill values required by marching, then march."""
    need = corners_needing_values(sign) & np.isnan(val)
    if need.any():
        val[need] = counter.values(keys[need])
    cell_size = float(grid.step.max())
    nv = np.where(np.isnan(val), np.nan, nudge(np.nan_to_num(val), cell_size))
    keys0 = case_keys(sign, nv)
    full = needs_full_values(keys0) & np.isnan(val).any(axis=1)
    if full.any():
        sub = np.isnan(val) & full[:, None]
        val[sub] = counter.values(keys[sub])
        nv = np.where(np.isnan(val), np.nan, nudge(np.nan_to_num(val), cell_size))
    return march(grid, cells, sign, nv)


def _surface_free(sign, lb, L, diag):
    """Cells certified to contain no zero: one sign and every point within
    ``diag / 2`` of a corner whose bound exceeds ``L * diag / 2``."""
    if not L:
        return np.zeros(sign.shape[:-1], dtype=bool)
    same = sign.all(axis=-1) | ~sign.any(axis=-1)
    return same & (lb.min(axis=-1) > 0.5 * L * diag * (1 + _SAFETY) + _MARGIN)


def _final_level(level, grid, scale, counter, L, cfg, prev):
    """Children of the active parents plus the expansion ring, marched."""
    pres = level.res
    pdiag = float(np.linalg.norm(grid.step * scale * 2))
    free = _surface_free(level.sign, level.lb, L, pdiag)
    par = _Level(pres, level.cells[~free], level.sign[~free], level.lb[~free], level.val[~free])
    keys_b, sign_b, lb_b, val_b, known_b = _bricks(par, grid, scale, counter, L, defer=bool(L))
    table, inv = _Table.from_bricks(keys_b, sign_b, lb_b, val_b, known_b)
    del sign_b, lb_b, val_b, known_b
    if L:
        table.propagate_bricks(inv, grid.step * scale, L)
    table.query_unknown(counter)

    cu = inv[:, _CHILD_CORNER_POS].reshape(-1, 8)
    sign = table.sign[cu]
    change = sign.any(axis=1) & ~sign.all(axis=1)
    children = (2 * par.cells[:, None, :] + _CHILD_OFF[None]).reshape(-1, 3)
    cells, fsign = children[change], sign[change]
    fval, fkeys = table.val[cu[change]], table.keys[cu[change]]

    members = _Members(level.cells, pres)
    ring, ring_parent = _expansion_ring(level.cells, pres, cfg.expansion_radius, members)
    n_final = 8 * len(level.cells) + len(ring)
    if len(ring):
        prev_table, prev_free = prev
        skip = prev_free(ring_parent) if prev_free is not None else np.zeros(len(ring), dtype=bool)
        ring = ring[~skip]
    if len(ring):
        rkeys, rsign, rval = _ring_corners(ring, grid, scale, counter, L, [(table, scale), (prev_table, 2 * scale)])
        rchange = rsign.any(axis=1) & ~rsign.all(axis=1)
        cells = np.concatenate([cells, ring[rchange]])
        fsign = np.concatenate([fsign, rsign[rchange]])
        fval = np.concatenate([fval, rval[rchange]])
        fkeys = np.concatenate([fkeys, rkeys[rchange]])
    return _finish(grid, cells, fsign, fval, fkeys, counter), n_final


def extract(field: ScalarField, cfg: ExtractionConfig | None = None):
    """Sparse marching cubes; returns ``(mesh, stats)``."""
    cfg = cfg or ExtractionConfig()
    t0 = time.perf_counter()
    D = cfg.final_resolution
    grid = Grid(D, cfg.bounds)
    counter = _Counter(field, grid, cfg.workers)
    stats = ExtractionStats(field_queries_dense_equivalent=(D + 1) ** 3)
    L = cfg.lipschitz if cfg.lipschitz is not None else field.lipschitz
    if L and cfg.activity_margin < L / 2:
        warnings.warn(
            f"activity_margin {cfg.activity_margin} < lipschitz/2 = {L / 2}: small features may be missed",
            stacklevel=2,
        )
    levels = cfg.levels

    # dense coarse level
    d0 = levels[0]
    scale0 = D // d0
    vidx = np.indices((d0 + 1,) * 3).reshape(3, -1).T
    counter.values(grid.key(vidx * scale0))
    cells0 = np.indices((d0,) * 3).reshape(3, -1).T
    cv = counter.lookup(grid.key((cells0[:, None, :] + cases.CORNERS[None]) * scale0).ravel()).reshape(-1, 8)
    level = _Level(d0, cells0, cv >= 0, np.abs(cv), cv)
    diag0 = float(np.linalg.norm(grid.step * scale0))
    keep = _active(level.sign, level.lb, cfg.activity_margin, diag0)
    level = _Level(d0, cells0[keep], level.sign[keep], level.lb[keep], level.val[keep])
    stats.cells_active_per_level.append(int(keep.sum()))
    stats.queries_per_level.append(counter.count)

    mesh = TriangleMesh.empty()
    prev = (None, None)
    if len(level.cells) == 0:
        stats.empty = True
        inside = bool(np.all(cv < 0))
        stats.diagnostic = "field is negative everywhere in bounds" if inside else "field is positive everywhere in bounds"
    else:
        for res in levels[1:]:
            scale = D // res
            before = counter.count
            if res == D:
                mesh, n_final = _final_level(level, grid, scale, counter, L, cfg, prev)
                stats.cells_active_per_level.append(int(n_final))
                stats.queries_per_level.append(counter.count - before)
                break
            keys_b, sign_b, lb_b, val_b, known_b = _bricks(level, grid, scale, counter, L)
            csign = sign_b[:, _CHILD_CORNER_POS].reshape(-1, 8)
            clb = lb_b[:, _CHILD_CORNER_POS].reshape(-1, 8)
            children = (2 * level.cells[:, None, :] + _CHILD_OFF[None]).reshape(-1, 3)
            diag = float(np.linalg.norm(grid.step * scale))
            if res * 2 == D:
                free = _surface_free(csign, clb, L, diag)
                prev = (_Table.from_bricks(keys_b, sign_b, lb_b, val_b, known_b)[0], _Members(children[free], res))
            act = _active(csign, clb, cfg.activity_margin, diag)
            cval = val_b[:, _CHILD_CORNER_POS].reshape(-1, 8)
            level = _Level(res, children[act], csign[act], clb[act], cval[act])
            stats.cells_active_per_level.append(int(act.sum()))
            stats.queries_per_level.append(counter.count - before)
        if mesh.is_empty():
            stats.empty = True
            stats.diagnostic = "no sign change at the final resolution"
    stats.field_queries_total = counter.count
    stats.wall_time = time.perf_counter() - t0
    mesh.meta["extraction"] = stats.as_dict()
    return mesh, stats


def dense_extract(field: ScalarField, resolution: int, bounds=DEFAULT_BOUNDS) -> TriangleMesh:
    """Reference marching over every cell of the ``resolution`` grid."""
    grid = Grid(resolution, bounds)
    n = resolution + 1
    yz = np.indices((n, n)).reshape(2, -1).T
    vals = np.empty((n, n, n))
    for x in range(n):
        idx = np.column_stack([np.full(len(yz), x), yz])
        vals[x] = field(grid.points(idx)).reshape(n, n)
    return march_lattice(grid, vals)


def march_lattice(grid: Grid, vals: np.ndarray) -> TriangleMesh:
    """March a full ``(D+1)^3`` array of vertex values on ``grid``."""
    resolution = grid.res
    pos = vals >= 0
    cells = []
    for x in range(resolution):
        sl = pos[x : x + 2]
        cfg = np.zeros((resolution, resolution), dtype=np.int64)
        for c, (bx, by, bz) in enumerate(cases.CORNERS):
            cfg |= sl[bx, by : by + resolution, bz : bz + resolution].astype(np.int64) << c
        yz = np.argwhere((cfg != 0) & (cfg != 255))
        if len(yz):
            cells.append(np.column_stack([np.full(len(yz), x), yz]))
    if not cells:
        return TriangleMesh.empty()
    cells = np.concatenate(cells)
    corner = cells[:, None, :] + cases.CORNERS[None]
    cv = nudge(vals[corner[..., 0], corner[..., 1], corner[..., 2]], float(grid.step.max()))
    return march(grid, cells, cv > 0, cv)
