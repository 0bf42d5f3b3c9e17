"""Topology-consistent marching-cubes case generation.

Instead of hand-typed tables, triangulations are derived per configuration:

* corner signs give the crossing edges;
* every ambiguous face (alternating signs) is resolved by the bilinear
  asymptotic decider, evaluated with a canonical corner order so the two
  cells sharing the face always agree;
* the resulting face segments chain into closed loops on the cube surface;
* loops bounding the same pair of sign regions are joined into a tube when the
  interior test finds the regions connected through the cell.

A configuration is keyed by ``(config, face_bits, merges)`` and its template
is memoised.  Template vertex references ``0..11`` are edge crossings,
``12+k`` are interior points given as weighted sums of edge crossings.

Corner ``i`` sits at ``(i & 1, (i >> 1) & 1, (i >> 2) & 1)``.  Triangles wind
counter-clockwise when seen from the positive (outside) side.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

CORNERS = np.array([(i & 1, (i >> 1) & 1, (i >> 2) & 1) for i in range(8)], dtype=np.int64)


def _other_axes(a):
    return [b for b in range(3) if b != a]


def _build_edges():
    edges = []
    for a in range(3):
        b, c = _other_axes(a)
        for k in range(4):
            lo = ((k & 1) << b) | (((k >> 1) & 1) << c)
            edges.append((lo, lo | (1 << a), a))
    return edges


EDGES = _build_edges()  # (lo corner, hi corner, axis); edge id = 4 * axis + k
_EDGE_OF = {}
for _e, (_lo, _hi, _a) in enumerate(EDGES):
    _EDGE_OF[(_lo, _hi)] = _e
    _EDGE_OF[(_hi, _lo)] = _e


def _build_faces():
    faces = []
    for a in range(3):
        b, c = _other_axes(a)
        for s in range(2):
            corners = [(s << a) | (ub << b) | (uc << c) for ub, uc in ((0, 0), (1, 0), (1, 1), (0, 1))]
            edges = [_EDGE_OF[(corners[i], corners[(i + 1) % 4])] for i in range(4)]
            normal = np.zeros(3)
            normal[a] = 1.0 if s else -1.0
            faces.append((corners, edges, normal))
    return faces


FACES = _build_faces()  # face id = 2 * axis + side; corners in canonical cyclic order
FACE_CORNERS = np.array([f[0] for f in FACES], dtype=np.int64)
EDGE_FACES = [frozenset(f for f, face in enumerate(FACES) if e in face[1]) for e in range(12)]
EDGE_MID = np.array([(CORNERS[lo] + CORNERS[hi]) / 2.0 for lo, hi, _ in EDGES])

# Edges parallel to each axis, ordered cyclically in the perpendicular slice.
SLICE_EDGES = []
for _a in range(3):
    _b, _c = _other_axes(_a)
    _order = []
    for ub, uc in ((0, 0), (1, 0), (1, 1), (0, 1)):
        lo = (ub << _b) | (uc << _c)
        _order.append(_EDGE_OF[(lo, lo | (1 << _a))])
    SLICE_EDGES.append(_order)


@dataclass(frozen=True)
class Template:
    """Triangles over edge/interior references plus interior point recipes."""

    triangles: np.ndarray  # (T, 3) int
    interior: tuple  # per interior point: tuple of (edge, weight)


class _DSU:
    def __init__(self, n):
        self.p = list(range(n))

    def find(self, x):
        while self.p[x] != x:
            self.p[x] = self.p[self.p[x]]
            x = self.p[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if rb < ra:
            ra, rb = rb, ra
        self.p[rb] = ra
        return True


def signs_of(config: int) -> list:
    return [bool((config >> i) & 1) for i in range(8)]


def ambiguous_faces(config: int) -> list:
    s = signs_of(config)
    out = []
    for f, (corners, _, _) in enumerate(FACES):
        a, b, c, d = (s[k] for k in corners)
        if a == c and b == d and a != b:
            out.append(f)
    return out


def face_joins_positive(vals) -> bool:
    """Asymptotic decider for one face given values in canonical cyclic order.

    Returns True when the two positive corners are connected across the face.
    The saddle value is ``det / (A + C - B - D)``; a zero saddle counts as
    positive, matching the zero-is-positive corner convention.
    """
    a, b, c, d = vals
    det = a * c - b * d
    return det >= 0 if a > 0 else det <= 0


def _segments(signs, facebits):
    """Oriented face segments as (start edge, end edge) pairs."""
    segs = []
    for f, (corners, edges, normal) in enumerate(FACES):
        s = [signs[k] for k in corners]
        crossing = [i for i in range(4) if s[i] != s[(i + 1) % 4]]
        if not crossing:
            continue
        raw = []
        if len(crossing) == 2:
            i, j = crossing
            ref = next(k for k in corners if signs[k])
            raw.append((edges[i], edges[j], ref, True))
        else:
            joined = bool((facebits >> f) & 1)
            for i in range(4):
                if s[i] != joined:
                    # corner i is cut off by the segment between its two face edges
                    raw.append((edges[(i - 1) % 4], edges[i], corners[i], s[i]))
        for e1, e2, ref, ref_positive in raw:
            p, q = EDGE_MID[e1], EDGE_MID[e2]
            side = float(np.dot(np.cross(normal, q - p), CORNERS[ref] - p))
            if (side > 0) != ref_positive:
                e1, e2 = e2, e1
            segs.append((e1, e2))
    return segs


def _loops(segs):
    nxt = {}
    for a, b in segs:
        if a in nxt:
            raise AssertionError("edge starts two segments")
        nxt[a] = b
    loops, seen = [], set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop, e = [], start
        while e not in seen:
            seen.add(e)
            loop.append(e)
            e = nxt[e]
        if e != start:
            raise AssertionError("face segments do not close into loops")
        loops.append(loop)
    return loops


def base_patches(signs, facebits):
    """Corner -> patch id (smallest corner of its surface region)."""
    dsu = _DSU(8)
    for lo, hi, _ in EDGES:
        if signs[lo] == signs[hi]:
            dsu.union(lo, hi)
    for f in ambiguous_faces(sum(1 << i for i in range(8) if signs[i])):
        corners = FACES[f][0]
        joined = bool((facebits >> f) & 1)
        pair = [k for k in corners if signs[k] == joined]
        dsu.union(pair[0], pair[1])
    return [dsu.find(i) for i in range(8)]


def _loop_patches(loop, signs, patch):
    lo, hi, _ = EDGES[loop[0]]
    pos, neg = (lo, hi) if signs[lo] else (hi, lo)
    return patch[pos], patch[neg]


@dataclass(frozen=True)
class CaseInfo:
    config: int
    facebits: int
    patch: tuple  # corner -> base patch id
    needs_interior: bool


@lru_cache(maxsize=None)
def case_info(key0: int) -> CaseInfo:
    """Static facts for ``key0 = config | facebits << 8``."""
    config, facebits = key0 & 0xFF, key0 >> 8
    signs = signs_of(config)
    patch = base_patches(signs, facebits)
    ids = set(patch)
    n_pos = len({patch[i] for i in range(8) if signs[i]})
    n_neg = len({patch[i] for i in range(8) if not signs[i]})
    needs = len(ids) > 2 and (n_pos > 1 or n_neg > 1)
    return CaseInfo(config, facebits, tuple(patch), needs)


def interior_merges(values, info: CaseInfo) -> tuple:
    """Patches joined through the cell interior, from axis-aligned slices.

    Along each axis the cell is swept by slices; each slice is a bilinear
    patch whose corner values are linear in the slice parameter.  On every
    sub-interval where the slice shows an alternating pattern, the sign of
    ``V0*V2 - V1*V3`` (maximised/minimised over the interval) tells which
    diagonal pair is connected inside that slice.  A connection found in any
    slice is a genuine connection of the trilinear interpolant.
    """
    signs = [v > 0 for v in values]
    patch = info.patch
    pairs = set()
    for axis in range(3):
        edges = SLICE_EDGES[axis]
        lo = [values[EDGES[e][0]] for e in edges]
        dv = [values[EDGES[e][1]] - values[EDGES[e][0]] for e in edges]
        ts = {0.0, 1.0}
        for l, d in zip(lo, dv):
            if d != 0:
                t = -l / d
                if 0.0 < t < 1.0:
                    ts.add(t)
        ts = sorted(ts)
        for ta, tb in zip(ts[:-1], ts[1:]):
            if tb <= ta:
                continue
            tm = 0.5 * (ta + tb)
            vm = [l + d * tm for l, d in zip(lo, dv)]
            sp = [v > 0 for v in vm]
            if not (sp[0] == sp[2] and sp[1] == sp[3] and sp[0] != sp[1]):
                continue
            alpha = dv[0] * dv[2] - dv[1] * dv[3]
            beta = lo[0] * dv[2] + lo[2] * dv[0] - lo[1] * dv[3] - lo[3] * dv[1]
            gamma = lo[0] * lo[2] - lo[1] * lo[3]
            cands = [ta, tb]
            if alpha != 0:
                tv = -beta / (2 * alpha)
                if ta < tv < tb:
                    cands.append(tv)
            dets = [(alpha * t + beta) * t + gamma for t in cands]
            has_pos, has_neg = max(dets) > 0, min(dets) < 0
            first_pair = has_pos if sp[0] else has_neg
            second_pair = has_neg if sp[0] else has_pos
            for connected, (i, j) in ((first_pair, (0, 2)), (second_pair, (1, 3))):
                if not connected:
                    continue
                ids = []
                for k in (i, j):
                    e = edges[k]
                    a, b, _ = EDGES[e]
                    ids.append(patch[a] if signs[a] == sp[k] else patch[b])
                if ids[0] != ids[1]:
                    pairs.add((min(ids), max(ids)))
    return tuple(sorted(pairs))


def _share_face(e1, e2):
    return bool(EDGE_FACES[e1] & EDGE_FACES[e2])


def _disk(loop, interior):
    n = len(loop)
    if n == 3:
        return [tuple(loop)]
    for k in range(n):
        if all(not _share_face(loop[k], loop[(k + j) % n]) for j in range(2, n - 1)):
            r = loop[k:] + loop[:k]
            return [(r[0], r[i], r[i + 1]) for i in range(1, n - 1)]
    c = 12 + len(interior)
    interior.append(tuple((e, 1.0 / n) for e in loop))
    return [(c, loop[i], loop[(i + 1) % n]) for i in range(n)]


def _zipper(p, q):
    """Annulus between boundary loops ``p`` and ``q``, each traversed forward.

    ``p`` is walked forward and ``q`` backward; both start at index 0.
    """
    m, n = len(p), len(q)
    tris = []
    i = j = 0
    while i < m or j < n:
        advance_p = j >= n or (i < m and (i + 1) * n <= (j + 1) * m)
        if advance_p:
            tris.append((p[i % m], p[(i + 1) % m], q[(-j) % n]))
            i += 1
        else:
            tris.append((q[(-j - 1) % n], q[(-j) % n], p[i % m]))
            j += 1
    return tris


def _tube(a, b, interior):
    # interior copies of b pulled halfway toward the tube centroid keep every
    # new edge off the cube faces
    ring = a + b
    base = 12 + len(interior)
    for e in b:
        recipe = {e: 0.5}
        for r in ring:
            recipe[r] = recipe.get(r, 0.0) + 0.5 / len(ring)
        interior.append(tuple(sorted(recipe.items())))
    bp = [base + k for k in range(len(b))]
    # start the a-side zipper at the copy nearest a[0]
    mid = [np.mean([EDGE_MID[e] for e in ring], axis=0)]
    pos = [0.5 * EDGE_MID[e] + 0.5 * mid[0] for e in b]
    start = int(np.argmin([np.linalg.norm(p - EDGE_MID[a[0]]) for p in pos]))
    bp_rot = bp[start:] + bp[:start]
    tris = _zipper(a, bp_rot)
    tris += _zipper(b, [bp[0]] + bp[:0:-1])
    return tris


def _valid_merge(base, merges, loops, signs):
    dsu = _DSU(8)
    for i in range(8):
        dsu.union(i, base[i])
    for x, y in merges:
        if signs[x] != signs[y]:
            return None
        dsu.union(x, y)
    comp = [dsu.find(base[i]) for i in range(8)]
    nodes = set(comp)
    links = {}
    for loop in loops:
        p, n = _loop_patches(loop, signs, comp)
        links.setdefault((p, n), []).append(loop)
    if len(links) != len(nodes) - 1:
        return None  # merges would close a cycle between regions
    return links


@lru_cache(maxsize=None)
def template(key0: int, merges: tuple = ()) -> Template:
    config, facebits = key0 & 0xFF, key0 >> 8
    signs = signs_of(config)
    if config in (0, 0xFF):
        return Template(np.zeros((0, 3), dtype=np.int64), ())
    loops = _loops(_segments(signs, facebits))
    base = list(case_info(key0).patch)
    links = _valid_merge(base, merges, loops, signs) if merges else None
    if links is None:
        links = {i: [loop] for i, loop in enumerate(loops)}
    interior, tris = [], []
    for key in sorted(links, key=lambda k: min(min(lp) for lp in links[k])):
        group = links[key]
        if len(group) == 2:
            tris += _tube(group[0], group[1], interior)
        else:
            for loop in group:
                tris += _disk(loop, interior)
    return Template(np.array(tris, dtype=np.int64).reshape(-1, 3), tuple(interior))


def loops_for(key0: int) -> list:
    config, facebits = key0 & 0xFF, key0 >> 8
    return _loops(_segments(signs_of(config), facebits))
