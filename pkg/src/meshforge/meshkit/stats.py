"""Mesh statistics and the numeric dataset filter."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

from ..isosurface.audit import verify_watertight
from ..mesh import TriangleMesh
from .sphere import welzl_sphere

MIN_FACES = 500
MAX_FACES = 80_000
MAX_MATERIALS = 100


@dataclass
class MeshStats:
    face_count: int
    vertex_count: int
    material_count: int = 0
    polygon_count: int = 0
    boundary_edges: int = 0
    non_manifold_edges: int = 0
    bbox: list = field(default_factory=list)
    sphere_center: list = field(default_factory=list)
    sphere_radius: float = 0.0
    # faces are counted after fan triangulation
    face_count_basis: str = "triangles"

    def as_dict(self) -> dict:
        return asdict(self)


def mesh_stats(mesh: TriangleMesh, material_count: int = 0, polygon_count: int | None = None, seed: int = 0) -> MeshStats:
    rep = verify_watertight(mesh)
    st = MeshStats(
        face_count=mesh.n_triangles,
        vertex_count=mesh.n_vertices,
        material_count=int(material_count),
        polygon_count=mesh.n_triangles if polygon_count is None else int(polygon_count),
        boundary_edges=rep.boundary_edge_count,
        non_manifold_edges=rep.non_manifold_edge_count,
    )
    if mesh.n_vertices:
        v = mesh.vertices
        st.bbox = [v.min(axis=0).tolist(), v.max(axis=0).tolist()]
        bs = welzl_sphere(v, seed)
        st.sphere_center = bs.center.tolist()
        st.sphere_radius = bs.radius
    return st


@dataclass
class FilterVerdict:
    accepted: bool
    reasons: list
    not_evaluated: list = field(default_factory=lambda: ["pure_color"])

    def as_dict(self) -> dict:
        return asdict(self)


def filter_mesh(stats: MeshStats) -> FilterVerdict:
    """Accept ``MIN_FACES <= faces <= MAX_FACES`` and at most ``MAX_MATERIALS``
    materials.  The pure-colour rule needs material graphs and is skipped."""
    reasons = []
    if stats.face_count < MIN_FACES:
        reasons.append({"rule": "face_count", "value": stats.face_count, "limit": f">= {MIN_FACES}"})
    elif stats.face_count > MAX_FACES:
        reasons.append({"rule": "face_count", "value": stats.face_count, "limit": f"<= {MAX_FACES}"})
    if stats.material_count > MAX_MATERIALS:
        reasons.append({"rule": "material_count", "value": stats.material_count, "limit": f"<= {MAX_MATERIALS}"})
    return FilterVerdict(not reasons, reasons)


def describe(reasons: list) -> str:
    """``face_count=499; material_count=101`` style summary."""
    return "; ".join(f"{r['rule']}={r['value']}" for r in reasons)
