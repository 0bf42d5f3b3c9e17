"""Reference implementations used only by the tests.

Each oracle is written from the defining formula with no code shared with the
package, so agreement is evidence rather than tautology.
"""

from __future__ import annotations

import itertools

import numpy as np


def edge_incidence(triangles) -> dict:
    """Undirected edge -> list of directed occurrences (a, b)."""
    out: dict = {}
    for t in np.asarray(triangles).tolist():
        for i in range(3):
            a, b = t[i], t[(i + 1) % 3]
            out.setdefault((min(a, b), max(a, b)), []).append((a, b))
    return out


def closed_and_oriented(triangles) -> bool:
    """Every edge used exactly twice, once in each direction."""
    inc = edge_incidence(triangles)
    return all(len(v) == 2 and v[0] == v[1][::-1] for v in inc.values())


def euler(vertices_used: int, triangles) -> int:
    return vertices_used - len(edge_incidence(triangles)) + len(triangles)


def canonical_soup(vertices, triangles, decimals: int = 12) -> list:
    """Triangles as position triples rotated to start at the smallest corner.

    Keeps winding, forgets vertex numbering.
    """
    v = np.round(np.asarray(vertices, dtype=np.float64), decimals)
    out = []
    for t in np.asarray(triangles).tolist():
        corners = [tuple(v[i]) for i in t]
        k = min(range(3), key=lambda i: corners[i])
        out.append(tuple(corners[k:] + corners[:k]))
    return sorted(out)


def block_index_brute(R: int, B: int, O: int) -> dict:
    """Enumerate the block/offset formula literally over the whole lattice."""
    table = {}
    for x in range(R):
        for y in range(R):
            for z in range(R):
                b = (x // O) * B * B + (y // O) * B + (z // O)
                o = (x % O) * O * O + (y % O) * O + (z % O)
                table[(x, y, z)] = (b, o)
    return table


def _sphere_through(pts: np.ndarray):
    """Smallest sphere with every point of ``pts`` on its boundary."""
    p0 = pts[0]
    if len(pts) == 1:
        return p0.copy(), 0.0
    A = pts[1:] - p0
    # centre = p0 + A^T lam with 2 (A A^T) lam = |A|^2
    G = A @ A.T
    rhs = 0.5 * np.einsum("ij,ij->i", A, A)
    try:
        lam = np.linalg.solve(G, rhs)
    except np.linalg.LinAlgError:
        return None
    c = p0 + A.T @ lam
    return c, float(np.linalg.norm(pts - c, axis=1).max())


def min_sphere_brute(points) -> tuple:
    """O(n^5) minimal enclosing sphere over every support subset of size <= 4."""
    P = np.asarray(points, dtype=np.float64)
    best = None
    for k in range(1, 5):
        for sub in itertools.combinations(range(len(P)), k):
            s = _sphere_through(P[list(sub)])
            if s is None:
                continue
            c, r = s
            if np.all(np.linalg.norm(P - c, axis=1) <= r * (1 + 1e-10) + 1e-12):
                if best is None or r < best[1]:
                    best = (c, r)
    return best


def morph_close_reference(img: np.ndarray, window: int) -> np.ndarray:
    """Closing (dilate then erode) of the 'surface present' image by explicit loops.

    ``img`` holds depths with inf as background.  Dilation takes the nearest
    (minimum) depth in the window; erosion the farthest (maximum).  Borders
    replicate the edge pixel.
    """
    h = window // 2
    H, W = img.shape

    def pass_(a, fn):
        out = np.empty_like(a)
        for i in range(H):
            for j in range(W):
                ii = np.clip(np.arange(i - h, i + h + 1), 0, H - 1)
                jj = np.clip(np.arange(j - h, j + h + 1), 0, W - 1)
                out[i, j] = fn(a[np.ix_(ii, jj)])
        return out

    return pass_(pass_(img, np.min), np.max)


def truncated_gaussian_reference(rng, m: int, sigma: float) -> np.ndarray:
    """Draw a large surplus of 3-D normals and keep those inside 3 sigma."""
    out = []
    have = 0
    while have < m:
        x = rng.standard_normal((2 * m, 3)) * sigma
        x = x[np.linalg.norm(x, axis=1) <= 3 * sigma]
        out.append(x)
        have += len(x)
    return np.concatenate(out)[:m]


def point_triangle_distance(p: np.ndarray, a, b, c) -> np.ndarray:
    """Exact Euclidean distance from many points to one triangle (Ericson)."""
    ab, ac = b - a, c - a
    ap = p - a
    d1, d2 = ap @ ab, ap @ ac
    bp = p - b
    d3, d4 = bp @ ab, bp @ ac
    cp = p - c
    d5, d6 = cp @ ab, cp @ ac
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    out = np.empty(len(p))
    closest = np.empty_like(p)
    done = np.zeros(len(p), bool)

    def put(mask, q):
        m = mask & ~done
        closest[m] = q[m] if q.ndim == 2 else q
        done[m] = True

    put((d1 <= 0) & (d2 <= 0), a)
    put((d3 >= 0) & (d4 <= d3), b)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = d1 / (d1 - d3)
        put((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v[:, None] * ab)
        put((d6 >= 0) & (d5 <= d6), c)
        w = d2 / (d2 - d6)
        put((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w[:, None] * ac)
        w2 = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        put((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + w2[:, None] * (c - b))
        denom = 1.0 / (va + vb + vc)
        v2, w3 = vb * denom, vc * denom
        put(np.ones(len(p), bool), a + v2[:, None] * ab + w3[:, None] * ac)
    out[:] = np.linalg.norm(p - closest, axis=1)
    return out


def distance_to_mesh(points, vertices, triangles) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    best = np.full(len(p), np.inf)
    V = np.asarray(vertices, dtype=np.float64)
    for t in np.asarray(triangles):
        best = np.minimum(best, point_triangle_distance(p, V[t[0]], V[t[1]], V[t[2]]))
    return best
