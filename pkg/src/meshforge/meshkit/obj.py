"""Wavefront OBJ subset: v, vn, vt, f, usemtl.  Everything else is skipped."""

from __future__ import annotations

import io

import numpy as np

from ..mesh import TriangleMesh


class ObjParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def _resolve(tok: str, count: int, what: str, lineno: int) -> int:
    try:
        i = int(tok)
    except ValueError:
        raise ObjParseError(lineno, f"bad {what} index {tok!r}") from None
    if i == 0:
        raise ObjParseError(lineno, f"{what} index 0 is invalid (OBJ indices are 1-based)")
    j = i - 1 if i > 0 else count + i
    if not 0 <= j < count:
        raise ObjParseError(lineno, f"{what} index {i} out of range (have {count})")
    return j


def parse_obj(data) -> tuple:
    """Parse OBJ bytes or text into ``(TriangleMesh, info)``.

    Polygons are fan-triangulated from their first corner.  ``info`` holds
    ``material_count`` (distinct ``usemtl`` names), ``materials``,
    ``polygon_count`` and the raw ``normal_count`` / ``texcoord_count``.
    """
    if isinstance(data, str):
        lines = data.splitlines()
    else:
        lines = []
        for n, raw in enumerate(bytes(data).splitlines(), 1):
            try:
                lines.append(raw.decode("utf-8"))
            except UnicodeDecodeError:
                raise ObjParseError(n, "not valid UTF-8") from None
    verts, tris = [], []
    n_vn = n_vt = n_poly = 0
    materials: dict = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise ObjParseError(lineno, "vertex needs 3 coordinates")
            try:
                xyz = [float(p) for p in parts[1:4]]
            except ValueError:
                raise ObjParseError(lineno, f"bad vertex coordinate in {line!r}") from None
            if not all(np.isfinite(xyz)):
                raise ObjParseError(lineno, "non-finite vertex coordinate")
            verts.append(xyz)
        elif tag == "vn":
            if len(parts) < 4:
                raise ObjParseError(lineno, "normal needs 3 components")
            n_vn += 1
        elif tag == "vt":
            if len(parts) < 2:
                raise ObjParseError(lineno, "texture coordinate needs at least 1 component")
            n_vt += 1
        elif tag == "f":
            corners = parts[1:]
            if len(corners) < 3:
                raise ObjParseError(lineno, f"face needs at least 3 vertices, got {len(corners)}")
            idx = []
            for c in corners:
                fields = c.split("/")
                if len(fields) > 3 or fields[0] == "":
                    raise ObjParseError(lineno, f"malformed face corner {c!r}")
                idx.append(_resolve(fields[0], len(verts), "vertex", lineno))
                if len(fields) > 1 and fields[1]:
                    _resolve(fields[1], n_vt, "texcoord", lineno)
                if len(fields) > 2 and fields[2]:
                    _resolve(fields[2], n_vn, "normal", lineno)
            n_poly += 1
            for k in range(1, len(idx) - 1):
                tris.append((idx[0], idx[k], idx[k + 1]))
        elif tag == "usemtl":
            name = line[len("usemtl") :].strip()
            if not name:
                raise ObjParseError(lineno, "usemtl without a material name")
            materials.setdefault(name, len(materials))
        # mtllib, o, g, s and anything unrecognised are skipped
    mesh = TriangleMesh(np.asarray(verts, dtype=np.float64).reshape(-1, 3), np.asarray(tris, dtype=np.int64).reshape(-1, 3))
    info = {
        "material_count": len(materials),
        "materials": list(materials),
        "polygon_count": n_poly,
        "normal_count": n_vn,
        "texcoord_count": n_vt,
    }
    return mesh, info


def read_obj(path) -> tuple:
    with open(path, "rb") as fh:
        return parse_obj(fh.read())


def write_obj(mesh: TriangleMesh, comment: str | None = None) -> bytes:
    """OBJ text with 9 significant digits; per-vertex normals become ``vn``."""
    out = io.StringIO()
    out.write(f"# meshforge obj: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles\n")
    if comment:
        for c in comment.splitlines():
            out.write(f"# {c}\n")
    for x, y, z in mesh.vertices.tolist():
        out.write(f"v {x:.9g} {y:.9g} {z:.9g}\n")
    t = mesh.triangles + 1
    if mesh.normals is not None:
        for x, y, z in mesh.normals.tolist():
            out.write(f"vn {x:.9g} {y:.9g} {z:.9g}\n")
        for a, b, c in t.tolist():
            out.write(f"f {a}//{a} {b}//{b} {c}//{c}\n")
    else:
        for a, b, c in t.tolist():
            out.write(f"f {a} {b} {c}\n")
    return out.getvalue().encode("utf-8")


def save_obj(path, mesh: TriangleMesh, comment: str | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(write_obj(mesh, comment))
