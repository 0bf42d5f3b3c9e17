"""``meshforge`` command line.

Every subcommand prints a JSON report on stdout.  Exit codes: 0 success,
1 a processing failure or a rejected mesh, 2 usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import codec, sampling
from .field import parse_field_spec
from .isosurface import ExtractionConfig, extract, verify_watertight
from .meshkit import filter_mesh, mesh_stats, normalize_to_unit_sphere, read_obj, save_obj
from .meshkit.stats import describe
from .pipeline import ConfigError, PipelineConfig, run


class _UsageError(Exception):
    pass


def _workers(args) -> int:
    env = os.environ.get("MESHFORGE_WORKERS")
    return int(env) if env else int(getattr(args, "workers", 1) or 1)


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=_json_default))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _odd(text: str) -> int:
    v = int(text)
    if v < 1 or v % 2 == 0:
        raise argparse.ArgumentTypeError("must be a positive odd integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def cmd_extract(args) -> int:
    try:
        field = parse_field_spec(args.field)
        cfg = ExtractionConfig(
            final_resolution=args.res,
            coarse_resolution=args.coarse,
            activity_margin=args.tau,
            expansion_radius=args.radius,
            workers=_workers(args),
        )
    except ValueError as exc:
        raise _UsageError(str(exc)) from None
    mesh, stats = extract(field, cfg)
    save_obj(args.out, mesh)
    report = stats.as_dict()
    report["watertight"] = verify_watertight(mesh).as_dict()
    report["output"] = str(args.out)
    if args.plot:
        from .plotting import plot_extraction

        plot_extraction(report, args.plot)
        report["plot"] = str(args.plot)
    _emit(report)
    return 0


def cmd_tokenize(args) -> int:
    mesh, _ = read_obj(args.input)
    transform = None
    if args.normalize:
        mesh, tf = normalize_to_unit_sphere(mesh, seed=args.seed)
        transform = tf.as_dict()
    cfg = codec.CodecConfig(args.B, args.O)
    qm = codec.quantize(mesh, cfg)
    ts = codec.encode(qm, cfg)
    codec.write_tokens(args.out, ts)
    report = codec.token_stats(ts).as_dict()
    report.update(
        B=cfg.B,
        O=cfg.O,
        merged_vertices=qm.merged_vertices,
        dropped_triangles=qm.dropped_triangles,
        duplicate_triangles=qm.duplicate_triangles,
        output=str(args.out),
    )
    if transform:
        report["transform"] = transform
    _emit(report)
    return 0


def cmd_detokenize(args) -> int:
    ts = codec.read_tokens(args.input)
    qm = codec.decode(ts)
    save_obj(args.out, qm.to_mesh())
    _emit({"vertices": len(qm.vertices), "triangles": len(qm.triangles), "output": str(args.out)})
    return 0


def cmd_watertight(args) -> int:
    from .watertight import make_watertight, save_volume

    mesh, _ = read_obj(args.input)
    transform = None
    if args.normalize:
        mesh, tf = normalize_to_unit_sphere(mesh, seed=args.seed)
        transform = tf.as_dict()
    out, vol = make_watertight(
        mesh,
        views=args.views,
        depth_resolution=args.dres,
        volume_resolution=args.vres,
        window=args.window,
        truncation=args.truncation,
        workers=_workers(args),
        return_volume=True,
    )
    save_obj(args.out, out)
    report = {"output": str(args.out), "params": out.meta["watertight"], "audit": verify_watertight(out).as_dict()}
    if args.volume:
        save_volume(args.volume, vol)
        report["volume"] = str(args.volume)
    if transform:
        report["transform"] = transform
    _emit(report)
    return 0


def cmd_sample(args) -> int:
    mesh, _ = read_obj(args.input)
    w = _workers(args)
    groups = sampling.sample_all(mesh, args.n, args.seed, args.bias, w)
    paths = sampling.write_samples(args.outdir, groups)
    report = {name: s.sidecar() for name, s in groups.items()}
    report["files"] = paths
    if args.plot:
        from .plotting import plot_samples

        plot_samples(groups, args.plot)
        report["plot"] = str(args.plot)
    _emit(report)
    return 0


def cmd_normalize(args) -> int:
    mesh, _ = read_obj(args.input)
    out, tf = normalize_to_unit_sphere(mesh, seed=args.seed)
    save_obj(args.out, out)
    _emit({"transform": tf.as_dict(), "output": str(args.out)})
    return 0


def cmd_filter(args) -> int:
    mesh, info = read_obj(args.input)
    st = mesh_stats(mesh, info["material_count"], info["polygon_count"], seed=args.seed)
    verdict = filter_mesh(st)
    _emit({"verdict": verdict.as_dict(), "summary": describe(verdict.reasons), "stats": st.as_dict()})
    return 0 if verdict.accepted else 1


def cmd_stats(args) -> int:
    mesh, info = read_obj(args.input)
    st = mesh_stats(mesh, info["material_count"], info["polygon_count"], seed=args.seed)
    report = st.as_dict()
    report["watertight"] = verify_watertight(mesh).as_dict()
    _emit(report)
    return 0


def cmd_pipeline(args) -> int:
    try:
        cfg = PipelineConfig.load(args.config)
        res = run(cfg)
    except ConfigError as exc:
        print(f"meshforge pipeline: config error: {exc}", file=sys.stderr)
        return 2
    _emit({"manifest": str(res.manifest_path), "done": res.done, "failed": res.failed})
    return res.exit_code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="meshforge", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("extract", help="sparse marching cubes of an analytic field")
    e.add_argument("out", type=Path)
    e.add_argument("--field", required=True, help="sphere:R[:cx,cy,cz] | torus:R:r | union:R:dx")
    e.add_argument("--res", type=int, default=256, help="final resolution D (power of two)")
    e.add_argument("--coarse", type=int, default=32, help="coarse resolution d0")
    e.add_argument("--tau", type=float, default=1.0, help="activity margin in cell diagonals")
    e.add_argument("--radius", type=int, default=1, help="expansion radius in cells")
    e.add_argument("--workers", type=_positive, default=1)
    e.add_argument("--plot", type=Path, help="write a per-level query figure here")
    e.set_defaults(fn=cmd_extract)

    t = sub.add_parser("tokenize", help="encode an OBJ into a token file")
    t.add_argument("input", type=Path)
    t.add_argument("out", type=Path)
    t.add_argument("--B", type=_positive, default=16, help="blocks per axis")
    t.add_argument("--O", type=_positive, default=8, help="block side length")
    t.add_argument("--normalize", action="store_true", help="fit into the unit sphere first")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(fn=cmd_tokenize)

    d = sub.add_parser("detokenize", help="decode a token file into an OBJ")
    d.add_argument("input", type=Path)
    d.add_argument("out", type=Path)
    d.set_defaults(fn=cmd_detokenize)

    w = sub.add_parser("watertight", help="TSDF envelope of a mesh")
    w.add_argument("input", type=Path)
    w.add_argument("out", type=Path)
    w.add_argument("--views", type=_positive, default=42)
    w.add_argument("--vres", type=_positive, default=256, help="volume resolution")
    w.add_argument("--dres", type=int, default=512, help="depth image resolution")
    w.add_argument("--window", type=_odd, default=3, help="closing window (odd)")
    w.add_argument("--truncation", type=float, default=None, help="TSDF truncation (default 3 voxels)")
    w.add_argument("--volume", type=Path, help="also write the fused volume (.p3vl)")
    w.add_argument("--normalize", action="store_true")
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--workers", type=_positive, default=1)
    w.set_defaults(fn=cmd_watertight)

    s = sub.add_parser("sample", help="SPACE / SURFACE / NEAR_SURFACE point groups")
    s.add_argument("input", type=Path)
    s.add_argument("outdir", type=Path)
    s.add_argument("--n", type=_positive, default=sampling.DEFAULT_N)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--bias", type=float, default=sampling.DEFAULT_BIAS)
    s.add_argument("--workers", type=_positive, default=1)
    s.add_argument("--plot", type=Path, help="write a scatter figure of the groups here")
    s.set_defaults(fn=cmd_sample)

    n = sub.add_parser("normalize", help="fit a mesh into the unit bounding sphere")
    n.add_argument("input", type=Path)
    n.add_argument("out", type=Path)
    n.add_argument("--seed", type=int, default=0)
    n.set_defaults(fn=cmd_normalize)

    f = sub.add_parser("filter", help="dataset filter verdict (exit 1 on reject)")
    f.add_argument("input", type=Path)
    f.add_argument("--seed", type=int, default=0)
    f.set_defaults(fn=cmd_filter)

    st = sub.add_parser("stats", help="mesh statistics")
    st.add_argument("input", type=Path)
    st.add_argument("--seed", type=int, default=0)
    st.set_defaults(fn=cmd_stats)

    pl = sub.add_parser("pipeline", help="batch pipeline over a corpus")
    pl.add_argument("--config", required=True, type=Path)
    pl.set_defaults(fn=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"meshforge {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"meshforge {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
