"""Rule-based mesh <-> token codec.

Vertices are quantized onto an ``R = B*O`` lattice and each integer vertex is
split into a block index ``b`` and an in-block offset ``o``.  Triangles are
grouped into fans around a shared center vertex; every fan becomes one patch::

    (b_c + B^3, o_c, b_1, o_1, b_2, o_2, ..., b_n, o_n)

which decodes to triangles ``(c, v_i, v_{i+1})``.  Token values live in three
disjoint ranges: regular blocks ``[0, B^3)``, patch-start blocks
``[B^3, 2B^3)`` and offsets ``[2B^3, 2B^3 + O^3)``.
"""

from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass, field

import numpy as np

from .mesh import TriangleMesh

MAGIC = b"P3TK"
VERSION = 1
_HEADER = struct.Struct("<4sBHHQ")


@dataclass(frozen=True)
class CodecConfig:
    B: int = 16
    O: int = 8

    def __post_init__(self):
        if int(self.B) != self.B or int(self.O) != self.O or self.B < 1 or self.O < 1:
            raise ValueError(f"B and O must be positive integers, got B={self.B}, O={self.O}")
        if self.B * self.O > 1 << 16:
            raise ValueError(f"R = B*O = {self.B * self.O} exceeds 65536")

    @property
    def R(self) -> int:
        return self.B * self.O

    @property
    def n_blocks(self) -> int:
        return self.B**3

    @property
    def n_offsets(self) -> int:
        return self.O**3

    @property
    def vocab_size(self) -> int:
        return 2 * self.B**3 + self.O**3


@dataclass
class QuantizedMesh:
    """Integer vertices in ``[0, R)^3`` without duplicates or degenerate faces."""

    vertices: np.ndarray
    triangles: np.ndarray
    config: CodecConfig = field(default_factory=CodecConfig)
    # lattice coordinate = floor((c + offset) * scale)
    scale: float = 64.0
    offset: float = 1.0
    merged_vertices: int = 0
    dropped_triangles: int = 0
    duplicate_triangles: int = 0

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.int64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)

    def _vertex_keys(self) -> np.ndarray:
        v, R = self.vertices, self.config.R
        return (v[:, 0] * R + v[:, 1]) * R + v[:, 2]

    def vertex_set(self) -> set:
        """Vertices as linear lattice keys ``(x*R + y)*R + z``."""
        return set(self._vertex_keys().tolist())

    def triangle_set(self) -> set:
        """Triangles as sorted key triples (winding ignored)."""
        k = np.sort(self._vertex_keys()[self.triangles], axis=1)
        return set(map(tuple, k.tolist()))

    def oriented_triangle_set(self) -> set:
        """Key triples rotated to start at the smallest vertex (winding kept)."""
        k = self._vertex_keys()[self.triangles]
        s = np.argmin(k, axis=1)[:, None]
        k = np.take_along_axis(k, (s + np.arange(3)) % 3, axis=1)
        return set(map(tuple, k.tolist()))

    def to_mesh(self) -> TriangleMesh:
        """Back to floats at lattice cell centers."""
        verts = (self.vertices + 0.5) / self.scale - self.offset
        return TriangleMesh(verts, self.triangles.copy())


def quantize(mesh: TriangleMesh, cfg: CodecConfig | None = None, eps: float = 1e-6) -> QuantizedMesh:
    """Snap vertices to the ``R``-lattice, merge duplicates, drop degenerate
    and repeated triangles, and discard vertices no triangle references."""
    cfg = cfg or CodecConfig()
    R = cfg.R
    v = mesh.vertices
    if len(v) and (not np.all(np.isfinite(v)) or np.abs(v).max() > 1 + eps):
        bad = int(np.argmax(np.where(np.isfinite(v), np.abs(v), np.inf).max(axis=1)))
        raise ValueError(
            f"vertex {bad} = {v[bad].tolist()} lies outside [-1, 1]^3; "
            "run meshkit.normalize_to_unit_sphere first"
        )
    scale = R / 2.0
    q = np.clip(np.floor((v + 1.0) * scale), 0, R - 1).astype(np.int64)
    uniq, inv = np.unique(q, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    merged = len(q) - len(uniq)
    t = inv[mesh.triangles] if len(mesh.triangles) else np.zeros((0, 3), dtype=np.int64)
    ok = (t[:, 0] != t[:, 1]) & (t[:, 1] != t[:, 2]) & (t[:, 0] != t[:, 2])
    dropped = int((~ok).sum())
    t = t[ok]
    _, first = np.unique(np.sort(t, axis=1), axis=0, return_index=True)
    dup = len(t) - len(first)
    t = t[np.sort(first)]
    used, tinv = np.unique(t.ravel(), return_inverse=True)
    return QuantizedMesh(
        uniq[used],
        tinv.reshape(-1, 3),
        cfg,
        scale=scale,
        offset=1.0,
        merged_vertices=int(merged),
        dropped_triangles=dropped,
        duplicate_triangles=int(dup),
    )


def block_index(v, cfg: CodecConfig | None = None):
    """``(b, o)`` for integer vertices; works on a single triple or an (n, 3) array."""
    cfg = cfg or CodecConfig()
    a = np.asarray(v, dtype=np.int64)
    if np.any(a < 0) or np.any(a >= cfg.R):
        raise ValueError(f"vertex coordinates must lie in [0, {cfg.R})")
    B, O = cfg.B, cfg.O
    blk, off = a // O, a % O
    b = (blk[..., 0] * B + blk[..., 1]) * B + blk[..., 2]
    o = (off[..., 0] * O + off[..., 1]) * O + off[..., 2]
    if a.ndim == 1:
        return int(b), int(o)
    return b, o


def block_index_inverse(b, o, cfg: CodecConfig | None = None):
    cfg = cfg or CodecConfig()
    b = np.asarray(b, dtype=np.int64)
    o = np.asarray(o, dtype=np.int64)
    if np.any(b < 0) or np.any(b >= cfg.n_blocks):
        raise ValueError(f"block index must lie in [0, {cfg.n_blocks})")
    if np.any(o < 0) or np.any(o >= cfg.n_offsets):
        raise ValueError(f"offset index must lie in [0, {cfg.n_offsets})")
    B, O = cfg.B, cfg.O
    blk = np.stack([b // (B * B), (b // B) % B, b % B], axis=-1)
    off = np.stack([o // (O * O), (o // O) % O, o % O], axis=-1)
    v = blk * O + off
    if v.ndim == 1:
        return tuple(int(c) for c in v)
    return v


@dataclass
class TokenSequence:
    config: CodecConfig
    tokens: np.ndarray

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64).reshape(-1)

    def __len__(self):
        return len(self.tokens)


class TokenGrammarError(ValueError):
    def __init__(self, position: int, message: str):
        super().__init__(f"token {position}: {message}")
        self.position = position


def _fans(center: int, tris: list, rank: np.ndarray) -> list:
    """Split triangles ``(center, a, b)`` into edge-adjacent, consistently
    oriented chains.  Returns ring vertex lists."""
    out_edges: dict = {}
    indeg: dict = {}
    for a, b in tris:
        out_edges.setdefault(a, []).append(b)
        indeg[b] = indeg.get(b, 0) + 1
    for a in out_edges:
        out_edges[a].sort(key=lambda x: rank[x])
    remaining = len(tris)
    rings = []
    while remaining:
        starts = [a for a, bs in out_edges.items() if bs and indeg.get(a, 0) == 0]
        if not starts:
            starts = [a for a, bs in out_edges.items() if bs]
        a = min(starts, key=lambda x: rank[x])
        ring = [a]
        while out_edges.get(a):
            b = out_edges[a].pop(0)
            indeg[b] -= 1
            remaining -= 1
            ring.append(b)
            a = b
        rings.append(ring)
    return rings


def encode(qm: QuantizedMesh, cfg: CodecConfig | None = None) -> TokenSequence:
    """Greedy fan cover of ``qm``'s triangles, emitted as patch tokens."""
    cfg = cfg or qm.config
    t = qm.triangles
    if len(t) == 0:
        return TokenSequence(cfg, np.zeros(0, dtype=np.int64))
    if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
        raise ValueError("degenerate triangle in quantized mesh")
    b, o = block_index(qm.vertices, cfg)
    rank = b * cfg.n_offsets + o
    nv, nf = len(qm.vertices), len(t)

    # vertex -> incident triangles (CSR)
    flat = t.ravel()
    order = np.argsort(flat, kind="stable")
    deg = np.bincount(flat, minlength=nv)
    ptr = np.concatenate([[0], np.cumsum(deg)]).tolist()
    inc_tri = (order // 3).tolist()
    tl = t.tolist()
    rank_l = rank.tolist()
    covered = [False] * nf
    count = deg.tolist()

    heap = [(-count[v], rank_l[v], v) for v in range(nv) if count[v]]
    heapq.heapify(heap)
    patches = []
    while heap:
        negc, _, c = heapq.heappop(heap)
        if -negc != count[c]:
            if count[c]:
                heapq.heappush(heap, (-count[c], rank_l[c], c))
            continue
        if count[c] == 0:
            continue
        tris = []
        for k in range(ptr[c], ptr[c + 1]):
            f = inc_tri[k]
            if covered[f]:
                continue
            covered[f] = True
            x, y, z = tl[f]
            if x == c:
                tris.append((y, z))
            elif y == c:
                tris.append((z, x))
            else:
                tris.append((x, y))
            for w in tl[f]:
                count[w] -= 1
        for ring in _fans(c, tris, rank_l):
            patches.append((rank_l[c], len(patches), c, ring))
    patches.sort()

    nb = cfg.n_blocks
    off_base = 2 * nb
    toks = []
    for _, _, c, ring in patches:
        toks.append(int(b[c]) + nb)
        toks.append(int(o[c]) + off_base)
        for v in ring:
            toks.append(int(b[v]))
            toks.append(int(o[v]) + off_base)
    return TokenSequence(cfg, np.asarray(toks, dtype=np.int64))


def parse_patches(ts: TokenSequence) -> list:
    """One left-to-right pass over the grammar.

    Returns ``[(start_position, [(b, o), ...]), ...]`` where the first pair of
    each patch is the center.  Raises ``TokenGrammarError`` naming the first
    offending position.
    """
    cfg = ts.config
    nb, no = cfg.n_blocks, cfg.n_offsets
    off_base = 2 * nb
    toks = ts.tokens.tolist()
    patches = []
    cur = None
    pending_block = None
    for i, tok in enumerate(toks):
        if tok < 0 or tok >= off_base + no:
            raise TokenGrammarError(i, f"value {tok} outside vocabulary [0, {off_base + no})")
        if tok >= off_base:
            if pending_block is None:
                raise TokenGrammarError(i, "offset token without a preceding block token")
            cur[1].append((pending_block, tok - off_base))
            pending_block = None
            continue
        if pending_block is not None:
            raise TokenGrammarError(i, "block token must be followed by an offset token")
        if tok >= nb:
            if cur is not None and len(cur[1]) < 3:
                raise TokenGrammarError(i, f"patch at token {cur[0]} has fewer than 2 ring vertices")
            cur = (i, [])
            patches.append(cur)
            pending_block = tok - nb
        else:
            if cur is None:
                raise TokenGrammarError(i, "sequence must start with a patch-start block token")
            pending_block = tok
    n = len(toks)
    if pending_block is not None:
        raise TokenGrammarError(n - 1, "sequence ends with a block token missing its offset")
    if cur is not None and len(cur[1]) < 3:
        raise TokenGrammarError(n - 1, f"patch at token {cur[0]} has fewer than 2 ring vertices")
    return patches


def validate(ts: TokenSequence) -> None:
    parse_patches(ts)


def decode(ts: TokenSequence) -> QuantizedMesh:
    """Expand every patch into its fan and weld vertices by integer coordinate."""
    cfg = ts.config
    patches = parse_patches(ts)
    if not patches:
        return QuantizedMesh(np.zeros((0, 3)), np.zeros((0, 3)), cfg, scale=cfg.R / 2.0)
    keys, tris = [], []
    for pos, pairs in patches:
        base = len(keys)
        keys.extend(bb * cfg.n_offsets + oo for bb, oo in pairs)
        for i in range(1, len(pairs) - 1):
            tris.append((base, base + i, base + i + 1))
    keys = np.asarray(keys, dtype=np.int64)
    uniq, inv = np.unique(keys, return_inverse=True)
    t = inv.reshape(-1)[np.asarray(tris, dtype=np.int64)]
    bad = (t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])
    if bad.any():
        # locate the patch carrying the first degenerate fan triangle
        counts = np.cumsum([len(p) - 2 for _, p in patches])
        k = int(np.searchsorted(counts, int(np.argmax(bad)), side="right"))
        raise TokenGrammarError(patches[k][0], "patch produces a degenerate triangle")
    verts = block_index_inverse(uniq // cfg.n_offsets, uniq % cfg.n_offsets, cfg)
    return QuantizedMesh(np.asarray(verts).reshape(-1, 3), t, cfg, scale=cfg.R / 2.0)


@dataclass
class TokenStats:
    token_count: int
    patch_count: int
    triangle_count: int
    mean_patch_size: float
    naive_token_count: int
    compression_ratio: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def token_stats(ts: TokenSequence) -> TokenStats:
    """Counts plus the ratio against the naive ``9 * F`` layout."""
    patches = parse_patches(ts)
    if not patches:
        return TokenStats(0, 0, 0, 0.0, 0, 0.0)
    nf = sum(len(p) - 2 for _, p in patches)
    n = len(ts.tokens)
    return TokenStats(n, len(patches), nf, nf / len(patches), 9 * nf, n / (9 * nf))


def to_bytes(ts: TokenSequence) -> bytes:
    toks = ts.tokens
    if len(toks) and (toks.min() < 0 or toks.max() >= 1 << 32):
        raise ValueError("tokens do not fit u32")
    head = _HEADER.pack(MAGIC, VERSION, ts.config.B, ts.config.O, len(toks))
    return head + toks.astype("<u4").tobytes()


def from_bytes(data: bytes) -> TokenSequence:
    if len(data) < _HEADER.size:
        raise ValueError("token file shorter than its header")
    magic, version, B, O, n = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ValueError(f"unsupported token file version {version}")
    body = data[_HEADER.size :]
    if len(body) != 4 * n:
        raise ValueError(f"header declares {n} tokens but body holds {len(body) / 4:g}")
    toks = np.frombuffer(body, dtype="<u4").astype(np.int64)
    return TokenSequence(CodecConfig(B, O), toks)


def write_tokens(path, ts: TokenSequence) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(ts))


def read_tokens(path) -> TokenSequence:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
