"""Mesh I/O, bounding spheres, statistics and the dataset filter."""

from .obj import ObjParseError, parse_obj, read_obj, save_obj, write_obj
from .ply import parse_ply, read_ply, save_ply, write_ply
from .sphere import BoundingSphere, Transform, circumsphere, normalize_to_unit_sphere, welzl_sphere
from .stats import MAX_FACES, MAX_MATERIALS, MIN_FACES, FilterVerdict, MeshStats, describe, filter_mesh, mesh_stats

__all__ = [
    "BoundingSphere",
    "FilterVerdict",
    "MAX_FACES",
    "MAX_MATERIALS",
    "MIN_FACES",
    "MeshStats",
    "ObjParseError",
    "Transform",
    "circumsphere",
    "describe",
    "filter_mesh",
    "mesh_stats",
    "normalize_to_unit_sphere",
    "parse_obj",
    "parse_ply",
    "read_obj",
    "read_ply",
    "save_obj",
    "save_ply",
    "welzl_sphere",
    "write_obj",
    "write_ply",
]
