import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import min_sphere_brute

from meshforge.mesh import TriangleMesh
from meshforge.meshkit import (
    MeshStats,
    ObjParseError,
    describe,
    filter_mesh,
    mesh_stats,
    normalize_to_unit_sphere,
    parse_obj,
    parse_ply,
    welzl_sphere,
    write_obj,
    write_ply,
)
from meshforge.meshkit import primitives as P

# ------------------------------------------------------------------ OBJ


def test_obj_minimal():
    m, info = parse_obj(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3")
    assert m.triangles.tolist() == [[0, 1, 2]]
    assert info["polygon_count"] == 1


def test_obj_quad_fan():
    m, _ = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    assert m.triangles.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_obj_negative_indices():
    m, _ = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n")
    assert m.triangles.tolist() == [[0, 1, 2]]


def test_obj_slash_forms_and_ignored_statements():
    text = """mtllib a.mtl
o thing
g grp
s 1
v 0 0 0
v 1 0 0
v 0 1 0
vt 0 0
vt 1 0
vt 0 1
vn 0 0 1
usemtl red
f 1/1/1 2/2/1 3/3/1
usemtl blue
f 1//1 3//1 2//1
usemtl red
f 1/1 2/2 3/3
"""
    m, info = parse_obj(text)
    assert m.n_triangles == 3
    assert info["material_count"] == 2
    assert info["normal_count"] == 1 and info["texcoord_count"] == 3


@pytest.mark.parametrize(
    "text,line",
    [
        ("v 0 0 0\nv 1 0 0\nf 1 2\n", 3),
        ("v 0 0 0\nv 1 0 0\nv 0 1 0\n\nf 1 2 4\n", 5),
        ("v 0 0 0\nf 0 1 1\n", 2),
        ("v 0 0\n", 1),
        ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/9 2 3\n", 4),
        ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/a 2 3\n", 4),
        ("v 0 0 x\n", 1),
        ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf /1 2 3\n", 4),
    ],
)
def test_obj_errors_carry_line(text, line):
    with pytest.raises(ObjParseError) as e:
        parse_obj(text)
    assert e.value.line == line
    assert f"line {line}" in str(e.value)


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=200))
def test_obj_fuzz_bytes_never_crash(data):
    try:
        parse_obj(data)
    except ObjParseError as e:
        assert e.line >= 1


_obj_line = st.one_of(
    st.builds(lambda *c: "v " + " ".join(c), *[st.sampled_from(["0", "1", "-2.5", "x", "1e3", "nan"])] * 3),
    st.builds(
        lambda cs: "f " + " ".join(cs),
        st.lists(st.sampled_from(["1", "2", "-1", "0", "3/1", "2//1", "4/2/1", "//", "9", "a"]), max_size=5),
    ),
    st.sampled_from(["vn 0 0 1", "vt 0 0", "usemtl m", "usemtl", "g x", "# hi", "", "o", "f"]),
)


@settings(max_examples=300, deadline=None)
@given(st.lists(_obj_line, max_size=12))
def test_obj_fuzz_structured(lines):
    try:
        m, _ = parse_obj("\n".join(lines))
    except ObjParseError as e:
        assert 1 <= e.line <= max(len(lines), 1)
        return
    if m.n_triangles:
        assert m.triangles.min() >= 0 and m.triangles.max() < m.n_vertices


def test_obj_write_empty_is_header_only():
    text = write_obj(TriangleMesh.empty()).decode()
    assert all(l.startswith("#") for l in text.splitlines())
    m, _ = parse_obj(text)
    assert m.is_empty()


def test_obj_round_trip_quantized_coordinates():
    rng = np.random.default_rng(0)
    v = rng.integers(-64, 64, (200, 3)) / 64.0
    t = rng.integers(0, 200, (300, 3))
    m = TriangleMesh(v, t)
    back, _ = parse_obj(write_obj(m))
    np.testing.assert_array_equal(back.vertices, v)
    np.testing.assert_array_equal(back.triangles, t)


def test_obj_round_trip_nine_digits(single_triangle):
    m = TriangleMesh(single_triangle.vertices * np.pi, single_triangle.triangles)
    back, _ = parse_obj(write_obj(m))
    np.testing.assert_allclose(back.vertices, m.vertices, rtol=1e-8)
    np.testing.assert_array_equal(back.triangles, m.triangles)


# ------------------------------------------------------------------ PLY


def test_ply_round_trip_bitwise():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(10_000, 3)).astype(np.float32)
    nrm = rng.normal(size=(10_000, 3)).astype(np.float32)
    lab = rng.integers(0, 2, 10_000).astype(np.uint8)
    d = parse_ply(write_ply(pts, nrm, {"inside": lab}, comments=["hello"]))
    assert d["points"].tobytes() == pts.tobytes()
    assert d["normals"].tobytes() == nrm.tobytes()
    np.testing.assert_array_equal(d["extra"]["inside"], lab)
    assert "hello" in d["comments"]


def test_ply_header_layout():
    raw = write_ply(np.zeros((2, 3)))
    head = raw.split(b"end_header\n")[0].decode()
    assert head.startswith("ply\nformat binary_little_endian 1.0\n")
    assert "element vertex 2" in head
    for a in "xyz":
        assert f"property float {a}" in head
    assert len(raw.split(b"end_header\n")[1]) == 2 * 3 * 4


# --------------------------------------------------------------- Welzl


def test_welzl_examples():
    octa = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1.0]])
    s = welzl_sphere(octa)
    np.testing.assert_allclose(s.center, 0, atol=1e-12)
    assert s.radius == pytest.approx(1.0, abs=1e-12)
    s = welzl_sphere([[0.3, -2, 5]])
    np.testing.assert_array_equal(s.center, [0.3, -2, 5])
    assert s.radius == 0
    cube = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], float)
    s = welzl_sphere(cube)
    np.testing.assert_allclose(s.center, 0.5, atol=1e-12)
    assert s.radius == pytest.approx(np.sqrt(3) / 2, abs=1e-12)
    with pytest.raises(ValueError):
        welzl_sphere(np.zeros((0, 3)))


def test_welzl_matches_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(60):
        n = int(rng.integers(1, 10))
        pts = rng.normal(size=(n, 3)) * rng.uniform(0.1, 3)
        c, r = min_sphere_brute(pts)
        s = welzl_sphere(pts, seed=int(rng.integers(1000)))
        assert s.radius == pytest.approx(r, rel=1e-9, abs=1e-12)


def test_welzl_beats_random_enclosing_spheres():
    rng = np.random.default_rng(2)
    pts = rng.uniform(-1, 1, (500, 3))
    s = welzl_sphere(pts)
    assert np.all(s.contains(pts))
    for _ in range(100):
        c = rng.uniform(-0.3, 0.3, 3)
        r = np.linalg.norm(pts - c, axis=1).max()
        assert s.radius <= r + 1e-12


def test_welzl_seed_invariant_radius():
    pts = np.random.default_rng(3).normal(size=(5000, 3))
    radii = [welzl_sphere(pts, seed=s).radius for s in range(5)]
    assert max(radii) - min(radii) <= 1e-12 * max(radii)


def test_normalize_examples():
    m, tf = normalize_to_unit_sphere(P.cube(1.0, center=(0.5, 0.5, 0.5)))
    assert np.linalg.norm(m.vertices, axis=1).max() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(tf.invert(m.vertices), P.cube(1.0, center=(0.5, 0.5, 0.5)).vertices, atol=1e-12)
    again, tf2 = normalize_to_unit_sphere(m)
    np.testing.assert_allclose(tf2.center, 0, atol=1e-9)
    assert tf2.scale == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(again.vertices, m.vertices, atol=1e-9)
    with pytest.raises(ValueError):
        normalize_to_unit_sphere(TriangleMesh(np.ones((3, 3)), np.array([[0, 1, 2]])))
    with pytest.raises(ValueError):
        normalize_to_unit_sphere(TriangleMesh.empty())


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(*[st.floats(-100, 100)] * 3), min_size=2, max_size=40), st.integers(0, 10))
def test_normalize_radius_one(pts, seed):
    v = np.array(pts)
    if np.ptp(v, axis=0).max() < 1e-3:
        return
    m, _ = normalize_to_unit_sphere(TriangleMesh(v, np.zeros((0, 3), int)), seed=seed)
    assert welzl_sphere(m.vertices).radius == pytest.approx(1.0, abs=1e-9)


# -------------------------------------------------------------- filter


def _st(faces, materials=0):
    return MeshStats(face_count=faces, vertex_count=faces, material_count=materials)


def test_filter_boundaries():
    v = filter_mesh(_st(499))
    assert not v.accepted and describe(v.reasons) == "face_count=499"
    assert filter_mesh(_st(500, 100)).accepted
    v = filter_mesh(_st(1000, 101))
    assert not v.accepted and describe(v.reasons) == "material_count=101"
    assert filter_mesh(_st(80_000)).accepted
    assert describe(filter_mesh(_st(80_001)).reasons) == "face_count=80001"
    v = filter_mesh(_st(10, 200))
    assert describe(v.reasons) == "face_count=10; material_count=200"
    assert "pure_color" in v.not_evaluated


def test_mesh_stats_consistent():
    m = P.icosphere(2)
    st_ = mesh_stats(m, material_count=3)
    assert (st_.face_count, st_.vertex_count, st_.material_count) == (320, 162, 3)
    assert st_.boundary_edges == 0 and st_.non_manifold_edges == 0
    assert st_.sphere_radius == pytest.approx(1.0, abs=1e-9)
    h = mesh_stats(P.hemisphere(2))
    assert h.boundary_edges > 0


def test_primitives_closed():
    from meshforge.isosurface import verify_watertight

    for m in (P.icosahedron(), P.icosphere(3), P.cube(2.0)):
        r = verify_watertight(m)
        assert r.is_closed and r.euler_characteristic == 2
        assert m.signed_volume() > 0
