import json
import subprocess
import sys

import numpy as np
import pytest
from corpus import FAST_PARAMS, grid_mesh
from oracles import canonical_soup

from meshforge import codec
from meshforge.cli import main
from meshforge.isosurface import verify_watertight
from meshforge.meshkit import parse_ply, read_obj, welzl_sphere, write_obj
from meshforge.meshkit import primitives as P
from meshforge.watertight import load_volume


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def _json(text):
    return json.loads(text)


def test_extract_sphere(tmp_path, capsys):
    out = tmp_path / "s.obj"
    code, text, _ = _run(capsys, "extract", "--field", "sphere:0.8", "--res", 64, "--coarse", 16, out)
    assert code == 0
    rep = _json(text)
    assert rep["watertight"]["is_closed"] and rep["watertight"]["euler_characteristic"] == 2
    m, _ = read_obj(out)
    assert verify_watertight(m).is_closed
    r = np.linalg.norm(m.vertices, axis=1)
    assert np.abs(r - 0.8).max() <= 2 * np.sqrt(3) / 64


def test_extract_plot(tmp_path, capsys):
    png = tmp_path / "q.png"
    code, text, _ = _run(capsys, "extract", "--field", "torus:0.6:0.25", "--res", 64, "--coarse", 16, "--plot", png, tmp_path / "t.obj")
    assert code == 0 and png.stat().st_size > 0
    assert _json(text)["watertight"]["euler_characteristic"] == 0


@pytest.mark.parametrize(
    "argv",
    [
        ["extract", "--field", "sphere:0.8", "--res", "48", "x.obj"],
        ["extract", "--field", "blob:1", "x.obj"],
        ["extract", "--field", "sphere:0.8", "--res", "64", "--coarse", "32", "x.obj"],
    ],
)
def test_extract_bad_config_is_usage_error(tmp_path, capsys, argv):
    argv[-1] = str(tmp_path / argv[-1])
    code, _, err = _run(capsys, *argv)
    assert code == 2
    assert "usage:" in err


@pytest.mark.parametrize(
    "argv",
    [
        ["watertight", "a.obj", "b.obj", "--window", "4"],
        ["tokenize", "a.obj", "b.p3tk", "--B", "0"],
        ["sample", "a.obj", "out", "--n", "-5"],
        ["extract", "x.obj"],
        ["frobnicate"],
        [],
    ],
)
def test_flag_validation_exits_2(argv):
    with pytest.raises(SystemExit) as e:
        main(argv)
    assert e.value.code == 2


def test_tokenize_detokenize_cube(tmp_path, capsys):
    src, tok, back = tmp_path / "cube.obj", tmp_path / "cube.p3tk", tmp_path / "back.obj"
    cube = P.cube(1.0)
    src.write_bytes(write_obj(cube))
    code, text, _ = _run(capsys, "tokenize", src, tok)
    assert code == 0
    rep = _json(text)
    assert rep["triangle_count"] == 12
    code, text, _ = _run(capsys, "detokenize", tok, back)
    assert code == 0
    m, _ = read_obj(back)
    qm = codec.quantize(cube, codec.CodecConfig(16, 8))
    want = qm.to_mesh()
    assert sorted(canonical_soup(m.vertices, m.triangles)) == sorted(canonical_soup(want.vertices, want.triangles))
    assert verify_watertight(m).is_closed


def test_tokenize_normalize_and_config(tmp_path, capsys):
    src = tmp_path / "big.obj"
    src.write_bytes(write_obj(P.icosphere(2, 5.0, (3, 3, 3))))
    code, _, err = _run(capsys, "tokenize", src, tmp_path / "a.p3tk")
    assert code == 1 and "normalize" in err
    code, text, _ = _run(capsys, "tokenize", src, tmp_path / "a.p3tk", "--normalize", "--B", 8, "--O", 4)
    assert code == 0
    rep = _json(text)
    assert (rep["B"], rep["O"]) == (8, 4) and "transform" in rep
    assert codec.read_tokens(tmp_path / "a.p3tk").config == codec.CodecConfig(8, 4)


def test_detokenize_rejects_garbage(tmp_path, capsys):
    p = tmp_path / "bad.p3tk"
    p.write_bytes(b"nonsense")
    code, _, err = _run(capsys, "detokenize", p, tmp_path / "o.obj")
    assert code == 1 and err


def test_normalize_and_stats(tmp_path, capsys):
    src = tmp_path / "c.obj"
    src.write_bytes(write_obj(P.cube(3.0, center=(1, 2, 3))))
    code, text, _ = _run(capsys, "normalize", src, tmp_path / "n.obj")
    assert code == 0
    m, _ = read_obj(tmp_path / "n.obj")
    assert welzl_sphere(m.vertices).radius == pytest.approx(1.0, abs=1e-8)
    np.testing.assert_allclose(_json(text)["transform"]["center"], [1, 2, 3], atol=1e-9)
    code, text, _ = _run(capsys, "stats", src)
    rep = _json(text)
    assert code == 0 and rep["face_count"] == 12 and rep["watertight"]["is_closed"]


def test_filter_exit_codes(tmp_path, capsys):
    small, ok = tmp_path / "small.obj", tmp_path / "ok.obj"
    small.write_bytes(write_obj(grid_mesh(10, 10)))
    ok.write_bytes(write_obj(P.icosphere(3)))
    code, text, _ = _run(capsys, "filter", small)
    assert code == 1
    rep = _json(text)
    assert not rep["verdict"]["accepted"] and rep["summary"] == "face_count=200"
    assert rep["verdict"]["reasons"][0]["value"] == 200
    code, text, _ = _run(capsys, "filter", ok)
    assert code == 0 and _json(text)["verdict"]["accepted"]


def test_missing_input_exits_1(tmp_path, capsys):
    code, _, err = _run(capsys, "stats", tmp_path / "nope.obj")
    assert code == 1 and "nope.obj" in err


def test_watertight_command(tmp_path, capsys):
    src = tmp_path / "h.obj"
    src.write_bytes(write_obj(P.hemisphere(3, 2.0)))
    out, vol = tmp_path / "w.obj", tmp_path / "w.p3vl"
    code, text, _ = _run(capsys, "watertight", src, out, "--normalize", "--vres", 32, "--dres", 128, "--views", 12, "--volume", vol)
    assert code == 0
    rep = _json(text)
    assert rep["audit"]["is_closed"] and rep["params"]["volume_resolution"] == 32
    assert load_volume(vol).values.shape == (32, 32, 32)
    m, _ = read_obj(out)
    assert verify_watertight(m).is_closed


def test_sample_command_and_workers_env(tmp_path, capsys, monkeypatch):
    src = tmp_path / "s.obj"
    src.write_bytes(write_obj(P.icosphere(2, 0.7)))
    code, text, _ = _run(capsys, "sample", src, tmp_path / "a", "--n", 3000, "--seed", 4, "--plot", tmp_path / "p.png")
    assert code == 0
    rep = _json(text)
    assert rep["space"]["n"] == 3000 and (tmp_path / "p.png").stat().st_size > 0
    monkeypatch.setenv("MESHFORGE_WORKERS", "3")
    _run(capsys, "sample", src, tmp_path / "b", "--n", 3000, "--seed", 4)
    for g in ("space", "surface", "near_surface"):
        assert (tmp_path / "a" / f"{g}.ply").read_bytes() == (tmp_path / "b" / f"{g}.ply").read_bytes()
    d = parse_ply((tmp_path / "a" / "space.ply").read_bytes())
    assert len(d["points"]) == 3000


def test_pipeline_exit_codes(tmp_path, capsys):
    (tmp_path / "in").mkdir()
    (tmp_path / "in" / "a.obj").write_bytes(write_obj(P.icosphere(3, 0.5)))
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"inputs": "in", "output": "out", "params": FAST_PARAMS}))
    code, text, _ = _run(capsys, "pipeline", "--config", cfg)
    assert code == 0 and _json(text)["done"] == 1
    (tmp_path / "in" / "b.obj").write_bytes(write_obj(grid_mesh(10, 10)))
    code, text, _ = _run(capsys, "pipeline", "--config", cfg)
    assert code == 1 and _json(text)["failed"] == 1
    cfg.write_text(json.dumps({"inputs": "missing", "output": "out"}))
    code, _, err = _run(capsys, "pipeline", "--config", cfg)
    assert code == 2 and "config error" in err
    code, _, _ = _run(capsys, "pipeline", "--config", tmp_path / "none.json")
    assert code == 2


def test_console_script_entry_point(tmp_path):
    out = subprocess.run(
        [sys.executable, "-m", "meshforge.cli", "extract", "--field", "sphere:0.5", "--res", "32", "--coarse", "8", str(tmp_path / "s.obj")],
        capture_output=True,
        text=True,
        check=False,
    )
    assert out.returncode == 0, out.stderr
    assert json.loads(out.stdout)["watertight"]["is_closed"]
