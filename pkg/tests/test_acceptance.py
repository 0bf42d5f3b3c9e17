"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines as they
happen; they are also repeated in the terminal summary.
"""

import json
import time

import numpy as np
import pytest
from acceptance_report import criterion
from corpus import build_corpus, snapshot, valid_meshes
from oracles import block_index_brute, canonical_soup, closed_and_oriented, min_sphere_brute
from scipy import stats

from meshforge import codec
from meshforge.field import csg_intersection, csg_union, sphere_field, torus_field
from meshforge.isosurface import ExtractionConfig, dense_extract, extract, verify_watertight
from meshforge.meshkit import MeshStats, describe, filter_mesh, normalize_to_unit_sphere, welzl_sphere
from meshforge.meshkit import primitives as P
from meshforge.pipeline import PipelineConfig, run
from meshforge.sampling import compute_curvature, sample_all, sample_space, sample_surface
from meshforge.watertight import EXTENT, make_watertight

pytestmark = pytest.mark.acceptance

R08 = 0.8


def _fields():
    return {
        "sphere": sphere_field((0, 0, 0), R08),
        "torus": torus_field(0.6, 0.25),
        "union": csg_union(sphere_field((-0.3, 0, 0), 0.5), sphere_field((0.3, 0, 0), 0.5)),
    }


EXPECTED_CHI = {"sphere": 2, "torus": 0, "union": 2}


def _closed(m):
    r = verify_watertight(m)
    return r.is_closed and r.is_manifold and r.boundary_edge_count == 0 and r.non_manifold_edge_count == 0


# ---------------------------------------------------------------- 1


def test_c01_query_reduction():
    with criterion(1, "query reduction, sphere r=0.8") as m:
        f = sphere_field((0, 0, 0), R08)
        t0 = time.perf_counter()
        _, s512 = extract(f, ExtractionConfig(512, 32))
        elapsed = time.perf_counter() - t0
        _, s256 = extract(f, ExtractionConfig(256, 32))
        m.update(
            q512=s512.field_queries_total,
            limit512=513**3 // 100,
            red512=round(513**3 / s512.field_queries_total, 1),
            red256=round(257**3 / s256.field_queries_total, 1),
            t512_s=round(elapsed, 1),
        )
        assert s512.field_queries_total <= 513**3 / 100
        assert 257**3 / s256.field_queries_total >= 30
        assert elapsed < 30


# ---------------------------------------------------------------- 2


def test_c02_sparse_equals_dense():
    with criterion(2, "sparse == dense marching cubes") as m:
        compared = 0
        for name, f in _fields().items():
            for D in (32, 64):
                sparse, _ = extract(f, ExtractionConfig(D, 8))
                dense = dense_extract(f, D)
                assert len(sparse.triangles) > 0, (name, D)
                a = canonical_soup(sparse.vertices, sparse.triangles)
                b = canonical_soup(dense.vertices, dense.triangles)
                assert a == b, f"{name} D={D}: {len(a)} vs {len(b)} triangles"
                compared += 1
        m["cases"] = compared


# ---------------------------------------------------------------- 3


def test_c03_watertight_suite():
    with criterion(3, "extracted meshes closed, Euler characteristic") as m:
        fields = dict(_fields())
        fields["lens"] = csg_intersection(sphere_field((-0.2, 0, 0), 0.6), sphere_field((0.2, 0, 0), 0.6))
        expected = dict(EXPECTED_CHI, lens=2)
        for name, f in fields.items():
            for D in (64, 128, 256):
                mesh, _ = extract(f, ExtractionConfig(D, 32 if D >= 128 else 16))
                r = verify_watertight(mesh)
                assert r.boundary_edge_count == 0 and r.non_manifold_edge_count == 0, (name, D)
                assert closed_and_oriented(mesh.triangles), (name, D)
                assert r.euler_characteristic == expected[name], (name, D, r.euler_characteristic)
                m[f"{name}{D}"] = r.euler_characteristic


# ---------------------------------------------------------------- 4


def test_c04_geometric_accuracy():
    with criterion(4, "sphere volume and vertex residual at D=256") as m:
        f = sphere_field((0, 0, 0), R08)
        mesh, _ = extract(f, ExtractionConfig(256, 32))
        want = 4 / 3 * np.pi * R08**3
        rel = abs(mesh.signed_volume() - want) / want
        diag = 2 * np.sqrt(3) / 256
        worst = float(np.abs(f(mesh.vertices)).max())
        m.update(volume_rel_err=f"{rel:.2e}", max_abs_f=f"{worst:.2e}", diagonal=f"{diag:.2e}")
        assert rel <= 0.01
        assert worst <= diag


# ---------------------------------------------------------------- 5


def _random_field(rng):
    kind = rng.integers(4)
    if kind == 0:
        r = rng.uniform(0.2, 0.8)
        return sphere_field(rng.uniform(-1, 1, 3) * (0.9 - r) / np.sqrt(3), r)
    if kind == 1:
        return torus_field(rng.uniform(0.35, 0.6), rng.uniform(0.12, 0.3))
    a = sphere_field(rng.uniform(-0.25, 0.25, 3), rng.uniform(0.3, 0.6))
    b = sphere_field(rng.uniform(-0.25, 0.25, 3), rng.uniform(0.3, 0.6))
    return csg_union(a, b) if kind == 2 else csg_intersection(a, b)


def _mean_degree(triangles):
    t = np.asarray(triangles)
    e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    edges = np.unique(e, axis=0)
    return 2 * len(edges) / len(np.unique(t))


def test_c05_codec_round_trip_fuzz():
    with criterion(5, "codec round trip on 1000 fuzzed meshes") as m:
        rng = np.random.default_rng(2024)
        checked = degree_ge4 = skipped_empty = 0
        worst_ratio = 0.0
        while checked < 1000:
            mesh, _ = extract(_random_field(rng), ExtractionConfig(32, 8))
            if mesh.is_empty():
                skipped_empty += 1
                continue
            cfg = codec.CodecConfig(int(rng.choice([8, 16, 32])), int(rng.choice([4, 8, 16])))
            qm = codec.quantize(mesh, cfg)
            if len(qm.triangles) == 0:
                skipped_empty += 1
                continue
            ts = codec.encode(qm, cfg)
            codec.validate(ts)
            back = codec.decode(ts)
            assert back.vertex_set() == qm.vertex_set(), checked
            assert back.oriented_triangle_set() == qm.oriented_triangle_set(), checked
            assert len(back.triangles) == len(qm.triangles), checked
            F = len(qm.triangles)
            if _mean_degree(qm.triangles) >= 4:
                degree_ge4 += 1
                worst_ratio = max(worst_ratio, len(ts) / F)
                assert len(ts) < 9 * F, (checked, len(ts), F)
            checked += 1
        m.update(meshes=checked, degree_ge4=degree_ge4, worst_tokens_per_face=round(worst_ratio, 3), empty_skipped=skipped_empty)


# ---------------------------------------------------------------- 6


def test_c06_block_index_exhaustive():
    with criterion(6, "block index exhaustive over [0,32)^3") as m:
        factorizations = [(1, 32), (2, 16), (4, 8), (8, 4), (16, 2), (32, 1)]
        for B, O in factorizations:
            cfg = codec.CodecConfig(B, O)
            table = block_index_brute(32, B, O)
            pts = np.array(list(table), dtype=np.int64)
            assert len(pts) == 32**3
            b, o = codec.block_index(pts, cfg)
            want = np.array(list(table.values()))
            np.testing.assert_array_equal(b, want[:, 0], err_msg=f"B={B} O={O}")
            np.testing.assert_array_equal(o, want[:, 1], err_msg=f"B={B} O={O}")
            np.testing.assert_array_equal(codec.block_index_inverse(b, o, cfg), pts, err_msg=f"B={B} O={O}")
        m.update(vertices=32**3, configs=len(factorizations))


# ---------------------------------------------------------------- 7


def test_c07_welzl_and_normalization():
    with criterion(7, "Welzl vs brute force, normalization radius") as m:
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(500):
            n = int(rng.integers(1, 13))
            pts = rng.normal(size=(n, 3)) * rng.uniform(0.01, 10) + rng.uniform(-5, 5, 3)
            _, r = min_sphere_brute(pts)
            s = welzl_sphere(pts, seed=int(rng.integers(1 << 30)))
            if r > 0:
                worst = max(worst, abs(s.radius - r) / r)
            else:
                assert s.radius == 0
        m["sets"] = 500
        m["worst_rel"] = f"{worst:.1e}"
        assert worst <= 1e-9
        meshes = dict(valid_meshes(), cube=P.cube(3.0, (5, 5, 5)))
        radii = []
        for name, mesh in meshes.items():
            out, _ = normalize_to_unit_sphere(mesh)
            radii.append(welzl_sphere(out.vertices).radius)
        dev = max(abs(r - 1) for r in radii)
        m.update(corpus=len(radii), worst_radius_dev=f"{dev:.1e}")
        assert dev <= 1e-9


# ---------------------------------------------------------------- 8


def test_c08_tsdf_watertighting():
    with criterion(8, "TSDF envelope: closure, radius error, runtime") as m:
        timings = []

        def timed(mesh, **kw):
            t0 = time.perf_counter()
            out = make_watertight(mesh, **kw)
            timings.append(time.perf_counter() - t0)
            return out

        hemi = timed(P.hemisphere(5, R08))
        assert _closed(hemi), "hemisphere output not closed"
        nested = timed(P.merge(P.icosphere(5, R08), P.flip(P.icosphere(4, 0.3))))
        assert _closed(nested), "nested output not closed"
        assert nested.connected_components() == 1
        sphere = P.icosphere(5, R08)
        errs = {}
        for res in (64, 128, 256):
            out = timed(sphere, volume_resolution=res)
            assert _closed(out), res
            vs = 2 * EXTENT / res
            r = np.linalg.norm(out.vertices, axis=1)
            # the half-voxel bias places the surface at r + vs/2 by design
            errs[res] = float(np.abs(r - (R08 + vs / 2)).mean() / vs)
        m.update({f"err{k}_vox": round(v, 3) for k, v in errs.items()})
        m["max_time_s"] = round(max(timings), 1)
        assert errs[256] <= 1.0
        assert errs[64] > errs[128] > errs[256]
        assert max(timings) < 90


# ---------------------------------------------------------------- 9


def test_c09_sampling_statistics():
    with criterion(9, "sampling: inside fraction, Gauss-Bonnet, chi-square, workers") as m:
        f = sphere_field((0, 0, 0), R08)
        sph, _ = extract(f, ExtractionConfig(256, 32))
        s = sample_space(sph, 500_000, seed=3)
        want = 4 / 3 * np.pi * R08**3 / 8
        frac = float(s.labels.mean())
        m["inside_rel_err"] = f"{abs(frac - want) / want:.2e}"
        assert abs(frac - want) <= 0.01 * want

        genus0 = {
            "icosphere": P.icosphere(4),
            "cube": P.cube(1.5),
            "extracted": sph,
            "union": extract(_fields()["union"], ExtractionConfig(128, 32))[0],
        }
        worst = max(abs(compute_curvature(g).defect.sum() - 4 * np.pi) for g in genus0.values())
        m["gauss_bonnet_dev"] = f"{worst:.1e}"
        assert worst <= 1e-6

        pvals = []
        ico = P.icosphere(2)
        ellipsoid = type(ico)(ico.vertices * [1.0, 0.5, 0.3], ico.triangles)
        for mesh in (ico, ellipsoid):
            assert mesh.n_triangles <= 1000
            w = compute_curvature(mesh)
            n = 1_000_000
            hits = np.bincount(sample_surface(mesh, w, n, seed=11).triangle_index, minlength=mesh.n_triangles)
            pvals.append(stats.chisquare(hits, w.probabilities() * n).pvalue)
        m["chi2_p"] = [round(float(p), 3) for p in pvals]
        assert min(pvals) > 0.01

        a = sample_all(sph, 500_000, seed=5, workers=1)
        b = sample_all(sph, 500_000, seed=5, workers=8)
        for k in a:
            assert a[k].to_ply() == b[k].to_ply(), k
        m["groups_identical"] = len(a)


# ---------------------------------------------------------------- 10


def test_c10_filter_rules():
    with criterion(10, "filter boundary cases") as m:
        v1 = filter_mesh(MeshStats(face_count=499, vertex_count=300, material_count=1))
        v2 = filter_mesh(MeshStats(face_count=500, vertex_count=300, material_count=100))
        v3 = filter_mesh(MeshStats(face_count=1000, vertex_count=600, material_count=101))
        m["verdicts"] = [v.accepted for v in (v1, v2, v3)]
        assert (v1.accepted, v2.accepted, v3.accepted) == (False, True, False)
        assert describe(v1.reasons) == "face_count=499"
        assert describe(v3.reasons) == "material_count=101"


# ---------------------------------------------------------------- 11


def test_c11_pipeline(tmp_path):
    with criterion(11, "pipeline on 10-asset corpus") as m:
        expected = build_corpus(tmp_path / "in")
        params = {"watertight": {"depth_resolution": 256, "volume_resolution": 128}, "sample": {"n": 20_000}}
        cfg = PipelineConfig.from_dict({"inputs": "in", "output": "out", "params": params, "seed": 1}, tmp_path)
        res = run(cfg)
        m.update(exit=res.exit_code, done=res.done, failed=res.failed)
        assert (res.exit_code, res.done, res.failed) == (1, 8, 2)
        manifest = json.loads(res.manifest_path.read_text())
        by_name = {e["source"].rsplit("/", 1)[-1]: e for e in manifest["assets"].values()}
        for name, reason in expected.items():
            e = by_name[name]
            if reason is None:
                assert e["status"] == "done", name
            else:
                assert e["status"] == "failed", name
                assert e["stages"]["filter"]["reason"].startswith(reason), e["stages"]["filter"]["reason"]
        before = snapshot(tmp_path / "out")
        again = run(PipelineConfig.from_dict({"inputs": "in", "output": "out", "params": params, "seed": 1}, tmp_path))
        assert again.exit_code == 1
        after = snapshot(tmp_path / "out")
        assert after == before, "rerun changed output bytes or mtimes"
        m["files_unchanged"] = len(after)
