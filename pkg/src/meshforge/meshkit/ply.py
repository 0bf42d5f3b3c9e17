"""Binary little-endian PLY point sets.

Only a single ``vertex`` element is supported.  Coordinates and normals are
float32; extra per-point properties (such as occupancy labels) may be any
scalar PLY type.
"""

from __future__ import annotations

import numpy as np

_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2",
    "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4",
    "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4",
    "double": "<f8", "float64": "<f8",
}
_NAMES = {"i1": "char", "u1": "uchar", "i2": "short", "u2": "ushort", "i4": "int", "u4": "uint", "f4": "float", "f8": "double"}


def write_ply(points, normals=None, extra: dict | None = None, comments=()) -> bytes:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cols = [("x", pts[:, 0], "<f4"), ("y", pts[:, 1], "<f4"), ("z", pts[:, 2], "<f4")]
    if normals is not None:
        nrm = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
        if len(nrm) != len(pts):
            raise ValueError("normals must match point count")
        cols += [("nx", nrm[:, 0], "<f4"), ("ny", nrm[:, 1], "<f4"), ("nz", nrm[:, 2], "<f4")]
    for name, arr in (extra or {}).items():
        arr = np.asarray(arr)
        if arr.shape != (len(pts),):
            raise ValueError(f"extra property {name!r} must have one value per point")
        cols.append((name, arr, arr.dtype.newbyteorder("<").str))
    dtype = np.dtype([(n, d) for n, _, d in cols])
    rec = np.empty(len(pts), dtype=dtype)
    for n, a, _ in cols:
        rec[n] = a
    head = ["ply", "format binary_little_endian 1.0"]
    head += [f"comment {c}" for c in comments]
    head.append(f"element vertex {len(pts)}")
    for n, _, d in cols:
        head.append(f"property {_NAMES[np.dtype(d).str[1:]]} {n}")
    head.append("end_header")
    return ("\n".join(head) + "\n").encode("ascii") + rec.tobytes()


def parse_ply(data: bytes) -> dict:
    """Returns ``{"points": (n,3) float32, "normals": (n,3) float32 or None,
    "extra": {name: array}, "comments": [...]}``."""
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise ValueError("not a PLY file")
    header = data[:end].decode("ascii").splitlines()
    body = data[end + len(b"end_header\n") :]
    count, props, comments = None, [], []
    for line in header[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            if parts[1:] != ["binary_little_endian", "1.0"]:
                raise ValueError(f"unsupported PLY format {' '.join(parts[1:])!r}")
        elif parts[0] == "comment":
            comments.append(line[len("comment ") :])
        elif parts[0] == "element":
            if count is not None or parts[1] != "vertex":
                raise ValueError("only a single 'vertex' element is supported")
            count = int(parts[2])
        elif parts[0] == "property":
            if parts[1] == "list" or parts[1] not in _TYPES:
                raise ValueError(f"unsupported property type {parts[1]!r}")
            props.append((parts[2], _TYPES[parts[1]]))
    if count is None:
        raise ValueError("PLY header has no vertex element")
    dtype = np.dtype(props)
    if len(body) != dtype.itemsize * count:
        raise ValueError(f"PLY body has {len(body)} bytes, expected {dtype.itemsize * count}")
    rec = np.frombuffer(body, dtype=dtype, count=count)
    names = dtype.names
    pts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1)
    normals = None
    if all(n in names for n in ("nx", "ny", "nz")):
        normals = np.stack([rec["nx"], rec["ny"], rec["nz"]], axis=1)
    extra = {n: rec[n].copy() for n in names if n not in ("x", "y", "z", "nx", "ny", "nz")}
    return {"points": pts, "normals": normals, "extra": extra, "comments": comments}


def save_ply(path, points, normals=None, extra=None, comments=()) -> None:
    with open(path, "wb") as fh:
        fh.write(write_ply(points, normals, extra, comments))


def read_ply(path) -> dict:
    with open(path, "rb") as fh:
        return parse_ply(fh.read())
