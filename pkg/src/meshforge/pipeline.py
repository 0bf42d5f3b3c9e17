"""Batch processing with a resumable JSON manifest.

Every asset runs ``filter -> normalize -> watertight -> extract_check ->
sample -> tokenize`` in order.  Assets are identified by the SHA-256 of their
input bytes.  The manifest is rewritten atomically after each asset, and only
when its content changes, so rerunning an unchanged corpus touches no file.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import codec, sampling
from .isosurface.audit import verify_watertight
from .meshkit import filter_mesh, mesh_stats, normalize_to_unit_sphere, parse_obj, read_obj, write_obj
from .meshkit.stats import describe
from .watertight import make_watertight

SCHEMA = 1
STAGES = ("filter", "normalize", "watertight", "extract_check", "sample", "tokenize")
_DEFAULT_PARAMS = {
    "normalize": {},
    "watertight": {"views": 42, "depth_resolution": 512, "volume_resolution": 256, "window": 3},
    "sample": {"n": sampling.DEFAULT_N, "bias": sampling.DEFAULT_BIAS},
    "tokenize": {"B": 16, "O": 8},
}


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    inputs: list
    output: Path
    stages: dict = field(default_factory=lambda: {s: True for s in STAGES})
    params: dict = field(default_factory=dict)
    seed: int = 0
    workers: int = 1

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> PipelineConfig:
        base = base or Path.cwd()
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - {"inputs", "input_dir", "output", "stages", "params", "seed", "workers"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "output" not in d:
            raise ConfigError("config needs 'output'")
        raw = d.get("inputs", d.get("input_dir"))
        if raw is None:
            raise ConfigError("config needs 'inputs' (a directory or a list of OBJ files)")
        if isinstance(raw, str):
            src = (base / raw).resolve()
            if not src.is_dir():
                raise ConfigError(f"input directory {src} does not exist")
            inputs = sorted(p for p in src.iterdir() if p.suffix.lower() == ".obj")
        elif isinstance(raw, list):
            inputs = [(base / p).resolve() for p in raw]
            missing = [str(p) for p in inputs if not p.is_file()]
            if missing:
                raise ConfigError(f"input files not found: {missing}")
        else:
            raise ConfigError("'inputs' must be a directory path or a list of files")
        stages = {s: True for s in STAGES}
        for k, v in (d.get("stages") or {}).items():
            if k not in stages:
                raise ConfigError(f"unknown stage {k!r}; stages are {list(STAGES)}")
            stages[k] = bool(v)
        params = {k: dict(v) for k, v in _DEFAULT_PARAMS.items()}
        for k, v in (d.get("params") or {}).items():
            if k not in params:
                raise ConfigError(f"no parameters for stage {k!r}")
            bad = set(v) - set(params[k]) - {"seed"}
            if bad and k != "normalize":
                raise ConfigError(f"unknown parameters for {k}: {sorted(bad)}")
            params[k].update(v)
        workers = int(os.environ.get("MESHFORGE_WORKERS", d.get("workers", 1)))
        if workers < 1:
            raise ConfigError("workers must be >= 1")
        cfg = cls(inputs, (base / d["output"]).resolve(), stages, params, int(d.get("seed", 0)), workers)
        cfg.check_output()
        return cfg

    @classmethod
    def load(cls, path) -> PipelineConfig:
        p = Path(path)
        try:
            d = json.loads(p.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {p} is not valid JSON: {exc}") from None
        return cls.from_dict(d, p.parent)

    def check_output(self):
        try:
            self.output.mkdir(parents=True, exist_ok=True)
            with tempfile.NamedTemporaryFile(dir=self.output):
                pass
        except OSError as exc:
            raise ConfigError(f"output directory {self.output} is not writable: {exc}") from None


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _atomic_write(path: Path, data: bytes) -> bool:
    """Write via temp file + rename.  Returns False (and leaves the file
    alone) when the content is already identical."""
    if path.exists() and path.read_bytes() == data:
        return False
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return True


def _strip_times(d):
    if isinstance(d, dict):
        return {k: _strip_times(v) for k, v in d.items() if k not in ("wall_time_s", "wall_time")}
    if isinstance(d, list):
        return [_strip_times(v) for v in d]
    return d


class Manifest:
    def __init__(self, path: Path):
        self.path = path
        self.lock = threading.Lock()
        if path.exists():
            try:
                self.data = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"manifest {path} is corrupt: {exc}") from None
            if self.data.get("schema") != SCHEMA:
                raise ConfigError(f"manifest schema {self.data.get('schema')} != {SCHEMA}")
        else:
            self.data = {"schema": SCHEMA, "assets": {}}

    def entry(self, asset_id: str) -> dict:
        return self.data["assets"].get(asset_id)

    def put(self, asset_id: str, entry: dict) -> None:
        with self.lock:
            self.data["assets"][asset_id] = entry
            self.data["assets"] = dict(sorted(self.data["assets"].items()))
            self.write()

    def write(self) -> bool:
        text = json.dumps(self.data, indent=2, sort_keys=True) + "\n"
        return _atomic_write(self.path, text.encode("utf-8"))


def _asset_seed(seed: int, asset_id: str) -> int:
    return int(hashlib.sha256(f"{seed}:{asset_id}".encode()).hexdigest()[:8], 16)


def _outputs_ok(stage: dict, base: Path) -> bool:
    for out in stage.get("outputs", {}).values():
        p = base / out["path"]
        if not p.is_file() or sha256_file(p) != out["sha256"]:
            return False
    return True


def _record(paths: dict, base: Path) -> dict:
    """Output paths relative to the manifest directory, with content hashes."""
    return {k: {"path": p.relative_to(base).as_posix(), "sha256": sha256_file(p)} for k, p in sorted(paths.items())}


def _write_if_changed(path: Path, data: bytes) -> Path:
    _atomic_write(path, data)
    return path


class _AssetRun:
    """State carried between the stages of one asset."""

    def __init__(self, cfg: PipelineConfig, src: Path, data: bytes, asset_id: str):
        self.cfg = cfg
        self.src = src
        self.data = data
        self.id = asset_id
        self.dir = cfg.output / "assets" / asset_id
        self.seed = _asset_seed(cfg.seed, asset_id)
        self.mesh = None
        self.info = None
        self.normalized = None
        self.watertight = None

    def parsed(self):
        if self.mesh is None:
            self.mesh, self.info = parse_obj(self.data)
        return self.mesh, self.info

    def load_normalized(self):
        if self.normalized is None:
            self.normalized = read_obj(self.dir / "normalized.obj")[0]
        return self.normalized

    def load_watertight(self):
        if self.watertight is None:
            self.watertight = read_obj(self.dir / "watertight.obj")[0]
        return self.watertight

    # each stage returns (outputs: dict name->path, stats: dict); raising marks failure

    def stage_filter(self):
        mesh, info = self.parsed()
        st = mesh_stats(mesh, info["material_count"], info["polygon_count"], seed=self.seed)
        verdict = filter_mesh(st)
        stats = {"mesh": st.as_dict(), "verdict": verdict.as_dict()}
        if not verdict.accepted:
            raise _StageFailure(describe(verdict.reasons), stats)
        return {}, stats

    def stage_normalize(self):
        mesh, _ = self.parsed()
        out, tf = normalize_to_unit_sphere(mesh, seed=self.seed)
        p = _write_if_changed(self.dir / "normalized.obj", write_obj(out))
        # reload so later stages see exactly what is on disk
        self.normalized = None
        return {"normalized": p}, {"transform": tf.as_dict()}

    def stage_watertight(self):
        prm = self.cfg.params["watertight"]
        out = make_watertight(
            self.load_normalized(),
            views=prm["views"],
            depth_resolution=prm["depth_resolution"],
            volume_resolution=prm["volume_resolution"],
            window=prm["window"],
        )
        p = _write_if_changed(self.dir / "watertight.obj", write_obj(out))
        self.watertight = None
        return {"watertight": p}, {"triangles": out.n_triangles, "vertices": out.n_vertices}

    def stage_extract_check(self):
        rep = verify_watertight(self.load_watertight())
        stats = rep.as_dict()
        if not (rep.is_closed and rep.is_manifold):
            raise _StageFailure(
                f"watertight output not closed: boundary_edges={rep.boundary_edge_count}, "
                f"non_manifold_edges={rep.non_manifold_edge_count}",
                stats,
            )
        return {}, stats

    def stage_sample(self):
        prm = self.cfg.params["sample"]
        groups = sampling.sample_all(self.load_watertight(), int(prm["n"]), self.seed, float(prm["bias"]), 1)
        paths = {}
        for name, s in groups.items():
            paths[f"{name}_ply"] = _write_if_changed(self.dir / f"{name}.ply", s.to_ply())
            side = json.dumps(s.sidecar(), indent=2, sort_keys=True) + "\n"
            paths[f"{name}_json"] = _write_if_changed(self.dir / f"{name}.json", side.encode())
        return paths, {name: s.sidecar() for name, s in groups.items()}

    def stage_tokenize(self):
        prm = self.cfg.params["tokenize"]
        cc = codec.CodecConfig(int(prm["B"]), int(prm["O"]))
        qm = codec.quantize(self.load_normalized(), cc)
        ts = codec.encode(qm, cc)
        p = _write_if_changed(self.dir / "tokens.p3tk", codec.to_bytes(ts))
        stats = codec.token_stats(ts).as_dict()
        stats.update(merged_vertices=qm.merged_vertices, dropped_triangles=qm.dropped_triangles, duplicate_triangles=qm.duplicate_triangles)
        return {"tokens": p}, stats


class _StageFailure(Exception):
    def __init__(self, reason: str, stats: dict | None = None):
        super().__init__(reason)
        self.reason = reason
        self.stats = stats or {}


def _process(cfg: PipelineConfig, manifest: Manifest, src: Path) -> str:
    data = src.read_bytes()
    asset_id = sha256_bytes(data)[:16]
    old = manifest.entry(asset_id)
    entry = {
        "id": asset_id,
        "source": old["source"] if old else str(src),
        "sha256": sha256_bytes(data),
        "stages": {},
    }
    if old and str(src) != old["source"]:
        aliases = sorted(set(old.get("aliases", [])) | {str(src)})
        entry["aliases"] = aliases
    elif old and old.get("aliases"):
        entry["aliases"] = old["aliases"]
    run = _AssetRun(cfg, src, data, asset_id)
    run.dir.mkdir(parents=True, exist_ok=True)
    blocked = None
    for name in STAGES:
        if not cfg.stages[name]:
            entry["stages"][name] = {"status": "skipped", "reason": "disabled in config"}
            continue
        if blocked:
            entry["stages"][name] = {"status": "skipped", "reason": f"{blocked} failed"}
            continue
        prev = (old or {}).get("stages", {}).get(name)
        if prev and prev.get("status") == "done" and _outputs_ok(prev, cfg.output):
            entry["stages"][name] = prev
            continue
        try:
            outputs, stats = getattr(run, f"stage_{name}")()
            entry["stages"][name] = {
                "status": "done",
                "reason": None,
                "outputs": _record(outputs, cfg.output),
                "stats": _strip_times(json.loads(json.dumps(stats))),
            }
        except _StageFailure as exc:
            entry["stages"][name] = {"status": "failed", "reason": exc.reason, "stats": _strip_times(exc.stats)}
            blocked = name
        except Exception as exc:  # one bad asset never aborts the batch
            entry["stages"][name] = {"status": "failed", "reason": f"{type(exc).__name__}: {exc}"}
            blocked = name
    entry["status"] = "failed" if blocked else "done"
    manifest.put(asset_id, entry)
    return entry["status"]


@dataclass
class RunResult:
    manifest_path: Path
    done: int
    failed: int

    @property
    def exit_code(self) -> int:
        return 1 if self.failed else 0


def run(cfg: PipelineConfig) -> RunResult:
    manifest = Manifest(cfg.output / "manifest.json")
    manifest.data["config"] = {
        "stages": cfg.stages,
        "params": cfg.params,
        "seed": cfg.seed,
    }
    manifest.write()
    # identical files share one asset id; process each id once
    unique, seen = [], set()
    for p in cfg.inputs:
        h = sha256_file(p)
        if h not in seen:
            seen.add(h)
            unique.append(p)
    if cfg.workers <= 1:
        statuses = [_process(cfg, manifest, p) for p in unique]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            statuses = list(pool.map(lambda p: _process(cfg, manifest, p), unique))
    return RunResult(manifest.path, statuses.count("done"), statuses.count("failed"))
