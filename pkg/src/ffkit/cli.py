"""Command-line front end: ``ffkit <command> [flags]``.

Exit codes: 0 success, 1 usage error (bad flags or config keys), 2 data
error (missing or malformed inputs, violated constraints). Every failure is
reported as one line on stderr naming the command and the offending file.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import METHODS, diffusion_fill
from .edges import DEFAULT_HIGH, DEFAULT_LOW, canny
from .io import (FormatError, dump_json, read_cameras, read_ffvox, read_ply, write_cameras, write_edges,
                 write_ffvox, write_frame, write_ply, write_report)
from .maskgen import MaskGenParams, generate_mask_room
from .meshing import marching_cubes
from .metrics import EvalParams, evaluate, worker_count
from .renderer import (DEFAULT_CX, DEFAULT_CY, DEFAULT_FX, DEFAULT_FY, DEFAULT_HEIGHT, DEFAULT_WIDTH, render,
                       sample_cameras)
from .scene import DEFAULT_CHUNK, Scene, chunk_starts, crop, occupied_mask
from .voxelizer import voxelize

log = logging.getLogger("ffkit")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class PipelineConfig:
    inputs: list = field(default_factory=list)
    voxel_size: float = 0.02
    trunc: float = 3.0
    diameter: int = 12
    max_stroke_step: int = 20
    total_step: int = 200
    target_ratio: list | None = field(default_factory=lambda: [0.30, 0.40])
    seed: int | None = None
    chunk_size: list = field(default_factory=lambda: list(DEFAULT_CHUNK))
    chunk_stride: list | None = None
    min_occ_frac: float = 0.0
    method: str = "diffusion"
    tol: float = 1e-4
    max_iters: int = 10_000
    num_cameras: int = 4
    camera_file: str | None = None
    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT
    fx: float = DEFAULT_FX
    fy: float = DEFAULT_FY
    cx: float = DEFAULT_CX
    cy: float = DEFAULT_CY
    tau: float = 1.0
    chamfer_points: int = 30_000
    canny_low: float = DEFAULT_LOW
    canny_high: float = DEFAULT_HIGH
    edge_tol: int = 1
    out: str | None = None

    def validate(self) -> "PipelineConfig":
        def need(cond, msg):
            if not cond:
                raise UsageError(msg)

        need(self.voxel_size > 0, "voxel_size must be > 0")
        need(self.trunc >= 1, "trunc must be >= 1")
        need(self.diameter >= 2, "diameter must be >= 2")
        need(self.max_stroke_step >= 1, "max_stroke_step must be >= 1")
        need(self.total_step >= 1, "total_step must be >= 1")
        if self.target_ratio is not None:
            need(len(self.target_ratio) == 2 and 0 < self.target_ratio[0] <= self.target_ratio[1] < 1,
                 f"target_ratio must be [lo, hi] with 0 < lo <= hi < 1, got {self.target_ratio}")
        need(self.seed is None or 0 <= int(self.seed) < 2**64, "seed must be a 64-bit unsigned integer")
        need(len(self.chunk_size) == 3 and min(self.chunk_size) >= 1, f"invalid chunk_size {self.chunk_size}")
        need(self.chunk_stride is None or (len(self.chunk_stride) == 3 and min(self.chunk_stride) >= 1),
             f"invalid chunk_stride {self.chunk_stride}")
        need(0 <= self.min_occ_frac <= 1, "min_occ_frac must be in [0, 1]")
        need(self.method in METHODS, f"method must be one of {sorted(METHODS)}")
        need(self.tol > 0, "tol must be > 0")
        need(self.max_iters >= 1, "max_iters must be >= 1")
        need(self.num_cameras >= 1, "num_cameras must be >= 1")
        need(self.tau > 0, "tau must be > 0")
        need(self.chamfer_points >= 1, "chamfer_points must be >= 1")
        need(0 < self.canny_low < self.canny_high <= 1, "canny thresholds must satisfy 0 < low < high <= 1")
        need(self.edge_tol >= 0, "edge_tol must be >= 0")
        return self

    def mask_params(self) -> MaskGenParams:
        return MaskGenParams(self.diameter, self.max_stroke_step, self.total_step, int(self.seed),
                             None if self.target_ratio is None else tuple(self.target_ratio))

    def eval_params(self, camera_file=None) -> EvalParams:
        return EvalParams(self.tau, self.chamfer_points, int(self.seed or 0), self.canny_low, self.canny_high,
                          self.edge_tol, camera_file)

    def intrinsics(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


_CONFIG_KEYS = {f.name for f in fields(PipelineConfig)}


def load_config(path) -> dict:
    try:
        with open(path) as f:
            data = json.load(f)
    except FileNotFoundError:
        raise DataError(f"{path}: no such file")
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: malformed JSON ({e.msg} at line {e.lineno})")
    if not isinstance(data, dict):
        raise DataError(f"{path}: config must be a JSON object")
    unknown = sorted(set(data) - _CONFIG_KEYS)
    if unknown:
        raise UsageError(f"{path}: unknown config keys {', '.join(unknown)}")
    return data


def effective_config(ns: argparse.Namespace) -> PipelineConfig:
    """Defaults, then the config file, then explicitly given flags."""
    values = {}
    if getattr(ns, "config", None):
        values.update(load_config(ns.config))
    values.update({k: v for k, v in vars(ns).items() if k in _CONFIG_KEYS})
    try:
        cfg = PipelineConfig(**values)
    except TypeError as e:
        raise UsageError(str(e))
    return cfg.validate()


def _require_seed(cfg: PipelineConfig, command: str):
    if cfg.seed is None:
        raise UsageError(f"{command} is randomized and needs --seed (or 'seed' in the config)")


# ---------------------------------------------------------------- flag types

def _ratio(text: str) -> list | None:
    if text.lower() == "none":
        return None
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}")
    return [lo, hi]


def _triple(text: str) -> list:
    try:
        vals = [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X,Y,Z integers, got {text!r}")
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected three values, got {text!r}")
    return vals


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


# ---------------------------------------------------------------- helpers

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _load_scene(path) -> Scene:
    if not os.path.exists(path):
        raise DataError(f"{path}: no such file")
    return read_ffvox(path)


def _load_input(path, cfg: PipelineConfig) -> Scene:
    if not os.path.exists(path):
        raise DataError(f"{path}: no such file")
    if str(path).lower().endswith(".ply"):
        return voxelize(read_ply(path), cfg.voxel_size, cfg.trunc)
    return read_ffvox(path)


def _load_cameras(path):
    if not os.path.exists(path):
        raise DataError(f"{path}: no such file")
    try:
        cams = read_cameras(path)
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: malformed camera file ({e})")
    if not cams:
        raise DataError(f"{path}: camera list is empty")
    return cams


def _parent(path) -> str:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return os.fspath(path)


def _provenance(command: str, cfg: PipelineConfig, **extra) -> dict:
    d = {"command": command, "ffkit_version": __version__, "config": _echo(cfg)}
    d.update(extra)
    return d


def _echo(cfg: PipelineConfig) -> dict:
    # the output location is not part of what was computed
    d = asdict(cfg)
    d.pop("out")
    return d


def _chunk_geometry(scene: Scene, cfg: PipelineConfig):
    size = [min(s, d) for s, d in zip(cfg.chunk_size, scene.dims)]
    stride = size if cfg.chunk_stride is None else cfg.chunk_stride
    return size, stride


def _render_views(scene: Scene, cameras, out_dir: Path, tag: str, cfg: PipelineConfig) -> list[str]:
    written = []
    for i, cam in enumerate(cameras):
        frame = render(scene, cam)
        prefix = out_dir / f"view_{i:03d}_{tag}"
        written += write_frame(frame, prefix)
        edges_path = f"{prefix}_edges.pgm"
        write_edges(canny(frame.color, cfg.canny_low, cfg.canny_high), edges_path)
        written.append(edges_path)
    return written


# ---------------------------------------------------------------- commands

def cmd_voxelize(ns, cfg: PipelineConfig):
    if not os.path.exists(ns.input):
        raise DataError(f"{ns.input}: no such file")
    scene = voxelize(read_ply(ns.input), cfg.voxel_size, cfg.trunc)
    write_ffvox(scene, _parent(ns.out))
    dump_json(_provenance("voxelize", cfg, input=ns.input, dims=list(scene.dims),
                          origin=list(scene.meta.origin)), ns.out + ".json")


def cmd_maskgen(ns, cfg: PipelineConfig):
    _require_seed(cfg, "maskgen")
    scene = _load_scene(ns.input)
    chunk_volume = int(np.prod(cfg.chunk_size))
    masked, stats = generate_mask_room(scene, cfg.mask_params(), chunk_volume)
    write_ffvox(masked, _parent(ns.out))
    dump_json(_provenance("maskgen", cfg, input=ns.input, chunk_volume=chunk_volume, stats=stats.to_dict()),
              ns.out + ".json")
    print(f"mask_ratio={stats.mask_ratio:.4f} attempts={stats.attempts}")


def cmd_chunk(ns, cfg: PipelineConfig):
    scene = _load_scene(ns.input)
    if any(s > d for s, d in zip(cfg.chunk_size, scene.dims)):
        raise DataError(f"{ns.input}: chunk size {tuple(cfg.chunk_size)} larger than scene dims {scene.dims}")
    stride = cfg.chunk_stride or cfg.chunk_size
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    occ = occupied_mask(scene.tsdf, scene.known)
    n = int(np.prod(cfg.chunk_size))
    index = []
    for start in chunk_starts(scene.dims, cfg.chunk_size, stride):
        sl = tuple(slice(s, s + k) for s, k in zip(start, cfg.chunk_size))
        frac = float(occ[sl].sum() / n)
        if frac >= cfg.min_occ_frac:
            name = f"chunk_{len(index):04d}.ffvox"
            write_ffvox(crop(scene, start, cfg.chunk_size), out / name)
            index.append({"file": name, "start": list(start), "occupied_fraction": frac})
    dump_json(_provenance("chunk", cfg, input=ns.input, chunks=index), out / "chunks.json")
    print(f"{len(index)} chunks")


def cmd_inpaint(ns, cfg: PipelineConfig):
    masked = _load_scene(ns.input)
    info = {}
    if cfg.method == "diffusion":
        pred, info = diffusion_fill(masked, cfg.tol, cfg.max_iters, return_info=True)
    else:
        pred = METHODS[cfg.method](masked)
    write_ffvox(pred, _parent(ns.out))
    dump_json(_provenance("inpaint", cfg, input=ns.input, solver=info), ns.out + ".json")


def cmd_mesh(ns, cfg: PipelineConfig):
    mesh = marching_cubes(_load_scene(ns.input))
    write_ply(mesh, _parent(ns.out), binary=not ns.ascii)
    print(f"{len(mesh.vertices)} vertices, {len(mesh.faces)} faces")


def cmd_render(ns, cfg: PipelineConfig):
    scene = _load_scene(ns.input)
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.camera_file:
        cams = _load_cameras(cfg.camera_file)
    else:
        _require_seed(cfg, "render")
        cams = sample_cameras(scene, cfg.num_cameras, np.random.default_rng(int(cfg.seed)), **cfg.intrinsics())
    write_cameras(cams, out / "cameras.json")
    _render_views(scene, cams, out, "render", cfg)


def cmd_eval(ns, cfg: PipelineConfig):
    pred, target = _load_scene(ns.pred), _load_scene(ns.target)
    if pred.meta != target.meta:
        raise DataError(f"{ns.pred}: grid {pred.meta} does not match target {ns.target} grid {target.meta}")
    cams = _load_cameras(ns.cameras)
    report = evaluate(pred, target, cams, cfg.eval_params(os.fspath(ns.cameras)))
    write_report(report, _parent(ns.out))
    print(f"iou={report.iou:.4f} recall={report.recall:.4f} chamfer={report.chamfer:.4f}cm ssim={report.ssim:.4f}")


def _pipeline_one(i: int, path: str, cfg: PipelineConfig, out: Path) -> list[Path]:
    written = []

    def keep(p):
        written.append(Path(p))
        return p

    base = out / f"{i:03d}_{Path(path).stem}"
    base.mkdir(parents=True, exist_ok=True)
    mask_ss, cam_ss = np.random.SeedSequence([int(cfg.seed), i]).spawn(2)
    target = _load_input(path, cfg)
    write_ffvox(target, keep(base / "scene.ffvox"))

    size, stride = _chunk_geometry(target, cfg)
    masked, stats = generate_mask_room(target, cfg.mask_params(), int(np.prod(cfg.chunk_size)),
                                       np.random.default_rng(mask_ss))
    write_ffvox(masked, keep(base / "masked.ffvox"))
    dump_json({"input": path, "stats": stats.to_dict()}, keep(base / "maskgen.json"))

    occ = occupied_mask(target.tsdf, target.known)
    n = int(np.prod(size))
    cam_rng = np.random.default_rng(cam_ss)
    fixed_cams = _load_cameras(cfg.camera_file) if cfg.camera_file else None
    chunks = []
    for start in chunk_starts(target.dims, size, stride):
        sl = tuple(slice(s, s + k) for s, k in zip(start, size))
        if occ[sl].sum() / n < cfg.min_occ_frac:
            continue
        cdir = base / f"chunk_{len(chunks):04d}"
        cdir.mkdir(exist_ok=True)
        t_chunk, m_chunk = crop(target, start, size), crop(masked, start, size)
        write_ffvox(t_chunk, keep(cdir / "target.ffvox"))
        write_ffvox(m_chunk, keep(cdir / "masked.ffvox"))
        solver = {}
        if cfg.method == "diffusion":
            pred, solver = diffusion_fill(m_chunk, cfg.tol, cfg.max_iters, return_info=True)
        else:
            pred = METHODS[cfg.method](m_chunk)
        write_ffvox(pred, keep(cdir / "pred.ffvox"))
        write_ply(marching_cubes(pred), keep(cdir / "pred.ply"))
        write_ply(marching_cubes(t_chunk), keep(cdir / "target.ply"))
        cams = fixed_cams or sample_cameras(t_chunk, cfg.num_cameras, cam_rng, **cfg.intrinsics())
        write_cameras(cams, keep(cdir / "cameras.json"))
        frames = cdir / "frames"
        frames.mkdir(exist_ok=True)
        for p in _render_views(pred, cams, frames, "pred", cfg) + _render_views(t_chunk, cams, frames, "target", cfg):
            keep(p)
        rel_cams = os.path.relpath(cdir / "cameras.json", out)
        report = evaluate(pred, t_chunk, cams, cfg.eval_params(rel_cams))
        report.provenance["solver"] = solver
        write_report(report, keep(cdir / "report.json"))
        chunks.append({"dir": cdir.name, "start": list(start), "iou": report.iou, "chamfer": report.chamfer})
    dump_json({"input": path, "chunk_size": size, "chunk_stride": list(stride), "chunks": chunks},
              keep(base / "chunks.json"))
    return written


def cmd_pipeline(ns, cfg: PipelineConfig):
    _require_seed(cfg, "pipeline")
    if not cfg.inputs:
        raise UsageError("pipeline needs at least one input ('inputs' in the config)")
    if not cfg.out:
        raise UsageError("pipeline needs --out (or 'out' in the config)")
    for p in cfg.inputs:
        if not os.path.exists(p):
            raise DataError(f"{p}: no such file")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=max(1, min(worker_count(), len(cfg.inputs)))) as pool:
        results = list(pool.map(lambda a: _pipeline_one(a[0], a[1], cfg, out), enumerate(cfg.inputs)))
    files = {}
    for written in results:
        for p in written:
            files[Path(os.path.relpath(p, out)).as_posix()] = sha256_file(p)
    manifest = _provenance("pipeline", cfg, files=dict(sorted(files.items())))
    dump_json(manifest, out / "manifest.json")
    print(f"{len(files)} files, manifest at {out / 'manifest.json'}")


# ---------------------------------------------------------------- parser

def _add_config(p):
    p.add_argument("--config", help="JSON config; explicit flags take precedence")


def _add_grid(p):
    p.add_argument("--voxel-size", dest="voxel_size", type=float)
    p.add_argument("--trunc", type=float)


def _add_mask(p):
    p.add_argument("--seed", type=_seed)
    p.add_argument("--diameter", type=int)
    p.add_argument("--max-stroke-step", dest="max_stroke_step", type=int)
    p.add_argument("--total-step", dest="total_step", type=int)
    p.add_argument("--target-ratio", dest="target_ratio", type=_ratio, metavar="LO:HI",
                   help="mask ratio interval, or 'none' to skip calibration")


def _add_chunk(p):
    p.add_argument("--chunk-size", dest="chunk_size", type=_triple, metavar="X,Y,Z")
    p.add_argument("--chunk-stride", dest="chunk_stride", type=_triple, metavar="X,Y,Z")
    p.add_argument("--min-occ-frac", dest="min_occ_frac", type=float)


def _add_inpaint(p):
    p.add_argument("--method", choices=sorted(METHODS))
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)


def _add_cameras(p):
    p.add_argument("--num-cameras", dest="num_cameras", type=int)
    for k in ("width", "height"):
        p.add_argument(f"--{k}", type=int)
    for k in ("fx", "fy", "cx", "cy"):
        p.add_argument(f"--{k}", type=float)


def _add_eval(p):
    p.add_argument("--tau", type=float)
    p.add_argument("--chamfer-points", dest="chamfer_points", type=int)
    p.add_argument("--canny-low", dest="canny_low", type=float)
    p.add_argument("--canny-high", dest="canny_high", type=float)
    p.add_argument("--edge-tol", dest="edge_tol", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ffkit", description="Free-form 3D scene inpainting benchmark toolkit.")
    parser.add_argument("--version", action="version", version=f"ffkit {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", default=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, func, help_):
        p = sub.add_parser(name, help=help_, argument_default=argparse.SUPPRESS)
        p.set_defaults(func=func)
        _add_config(p)
        return p

    p = command("voxelize", cmd_voxelize, "mesh (PLY) to TSDF scene")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    _add_grid(p)

    p = command("maskgen", cmd_maskgen, "free-form 3D mask generation")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    _add_mask(p)
    p.add_argument("--chunk-size", dest="chunk_size", type=_triple, metavar="X,Y,Z",
                   help="reference chunk whose volume sets the step budget")

    p = command("chunk", cmd_chunk, "crop a scene into chunks")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True, help="output directory")
    _add_chunk(p)

    p = command("inpaint", cmd_inpaint, "fill masked voxels with a baseline")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    _add_inpaint(p)

    p = command("mesh", cmd_mesh, "marching cubes to PLY")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ascii", action="store_true", default=False)

    p = command("render", cmd_render, "render color/depth/valid/edge images")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--cameras", dest="camera_file")
    p.add_argument("--seed", type=_seed)
    _add_cameras(p)
    p.add_argument("--canny-low", dest="canny_low", type=float)
    p.add_argument("--canny-high", dest="canny_high", type=float)

    p = command("eval", cmd_eval, "score a prediction against its target")
    p.add_argument("--pred", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=_seed)
    _add_eval(p)

    p = command("pipeline", cmd_pipeline, "voxelize, mask, chunk, inpaint, render and evaluate")
    p.add_argument("--out")
    p.add_argument("--inputs", nargs="+")
    p.add_argument("--camera-file", dest="camera_file")
    _add_grid(p)
    _add_mask(p)
    _add_chunk(p)
    _add_inpaint(p)
    _add_cameras(p)
    _add_eval(p)
    return parser


_COMMANDS = ("voxelize", "maskgen", "chunk", "inpaint", "mesh", "render", "eval", "pipeline")


def _one_line(msg: str) -> str:
    return " ".join(str(msg).split())


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    named = [a for a in argv if a in _COMMANDS]
    command = f"ffkit {named[0]}" if named else "ffkit"
    try:
        ns = build_parser().parse_args(argv)
        command = f"ffkit {ns.command}"
        logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                            format="%(name)s: %(message)s")
        subject = getattr(ns, "input", None) or getattr(ns, "pred", None) or getattr(ns, "config", None)
        try:
            ns.func(ns, effective_config(ns))
        except (ValueError, OSError) as e:
            if isinstance(e, FileNotFoundError) and e.filename:
                raise DataError(f"{e.filename}: no such file")
            msg = _one_line(e)
            if isinstance(e, FormatError) or subject is None or str(subject) in msg:
                raise DataError(msg)
            raise DataError(f"{subject}: {msg}")
    except UsageError as e:
        print(f"{command}: usage error: {_one_line(e)}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"{command}: error: {_one_line(e)}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
