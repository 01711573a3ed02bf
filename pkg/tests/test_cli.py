import json

import numpy as np
import pytest

from ffkit import cli
from ffkit.io import read_cameras, read_ffvox, read_netpbm, read_ply, write_cameras, write_ffvox, write_ply
from ffkit.renderer import look_at
from ffkit.scene import occupied_mask
from ffkit.synthetic import room_mesh


@pytest.fixture
def room_file(tmp_path, room):
    p = tmp_path / "s.ffvox"
    write_ffvox(room, p)
    return p


def run(*args):
    return cli.main([str(a) for a in args])


def test_maskgen_example(tmp_path, room_file, room, capsys):
    out = tmp_path / "m.ffvox"
    assert run("maskgen", "--in", room_file, "--seed", 7, "--target-ratio", "0.30:0.40", "--out", out) == 0
    m = read_ffvox(out)
    occ = occupied_mask(room.tsdf, room.known)
    ratio = (m.mask & occ).sum() / occ.sum()
    assert 0.30 <= ratio <= 0.40
    side = json.loads((tmp_path / "m.ffvox.json").read_text())
    assert side["stats"]["mask_ratio"] == pytest.approx(ratio)
    assert side["config"]["seed"] == 7 and side["config"]["diameter"] == 12
    assert "mask_ratio" in capsys.readouterr().out


def test_maskgen_requires_seed(tmp_path, room_file, capsys):
    assert run("maskgen", "--in", room_file, "--out", tmp_path / "m.ffvox") == cli.EXIT_USAGE
    err = capsys.readouterr().err.strip()
    assert err.startswith("ffkit maskgen: usage error") and "seed" in err and "\n" not in err


def test_eval_identity(tmp_path, room_file, room):
    cams = tmp_path / "c.json"
    write_cameras([look_at([0.9, 0.9, 1.6], [0.4, 0.4, 0.3], width=64, height=48, fx=58, fy=58, cx=32, cy=24)], cams)
    out = tmp_path / "r.json"
    assert run("eval", "--pred", room_file, "--target", room_file, "--cameras", cams, "--out", out,
               "--chamfer-points", 3000) == 0
    r = json.loads(out.read_text())
    assert r["iou"] == 1.0 and r["recall"] == 1.0 and r["ssim"] == 1.0 and r["edge_f1"] == 1.0
    assert r["l_geo"] == 0.0 and r["l_color"] == 0.0 and r["l_depth"] == 0.0
    assert r["chamfer"] <= 1e-9
    assert r["provenance"]["chamfer_points"] == 3000


def test_voxelize_mesh_render(tmp_path):
    mesh = room_mesh(np.random.default_rng(2), extent=(0.64, 0.64, 0.8))
    ply = tmp_path / "room.ply"
    write_ply(mesh, ply)
    vox = tmp_path / "room.ffvox"
    assert run("voxelize", "--in", ply, "--out", vox, "--voxel-size", 0.04) == 0
    s = read_ffvox(vox)
    assert s.meta.voxel_size == pytest.approx(0.04) and s.known.all()
    assert run("mesh", "--in", vox, "--out", tmp_path / "back.ply") == 0
    assert len(read_ply(tmp_path / "back.ply").faces) > 0
    rd = tmp_path / "views"
    assert run("render", "--in", vox, "--out", rd, "--num-cameras", 2, "--seed", 1,
               "--width", 40, "--height", 32, "--cx", 20, "--cy", 16, "--fx", 36, "--fy", 36) == 0
    assert len(read_cameras(rd / "cameras.json")) == 2
    img = read_netpbm(next(rd.glob("*_color.ppm")))
    assert img.shape == (32, 40, 3)


def test_chunk_and_inpaint(tmp_path, room_file):
    m = tmp_path / "m.ffvox"
    assert run("maskgen", "--in", room_file, "--seed", 1, "--out", m) == 0
    cd = tmp_path / "chunks"
    assert run("chunk", "--in", m, "--out", cd, "--chunk-size", "32,32,64") == 0
    listing = json.loads((cd / "chunks.json").read_text())
    files = sorted(cd.glob("chunk_*.ffvox"))
    assert len(files) == 8 and len(files) == len(listing["chunks"])
    filled = tmp_path / "f.ffvox"
    assert run("inpaint", "--in", m, "--out", filled, "--method", "nearest") == 0
    f = read_ffvox(filled)
    assert not f.mask.any() and f.known.all()


def test_missing_input_is_data_error(tmp_path, capsys):
    missing = tmp_path / "nope.ffvox"
    assert run("mesh", "--in", missing, "--out", tmp_path / "x.ply") == cli.EXIT_DATA
    err = capsys.readouterr().err.strip()
    assert err.startswith("ffkit mesh: error") and "nope.ffvox" in err and "\n" not in err


def test_malformed_input_is_data_error(tmp_path, capsys):
    bad = tmp_path / "bad.ffvox"
    bad.write_bytes(b"XXXX" + bytes(60))
    assert run("inpaint", "--in", bad, "--out", tmp_path / "o.ffvox") == cli.EXIT_DATA
    assert "bad magic at offset 0" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["maskgen", "--in", "a", "--out", "b", "--seed", "x"],
    ["maskgen", "--in", "a", "--out", "b", "--seed", "1", "--target-ratio", "0.5:0.4"],
    ["inpaint", "--in", "a", "--out", "b", "--method", "magic"],
    ["frobnicate"],
    ["eval", "--pred", "a"],
])
def test_usage_errors(argv, capsys):
    assert cli.main(argv) == cli.EXIT_USAGE
    assert "usage error" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, room_file, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 1, "diamter": 8}))
    assert run("maskgen", "--in", room_file, "--out", tmp_path / "m.ffvox", "--config", cfg) == cli.EXIT_USAGE
    assert "diamter" in capsys.readouterr().err


def test_malformed_config_is_data_error(tmp_path, room_file):
    cfg = tmp_path / "c.json"
    cfg.write_text("{seed: 1")
    assert run("maskgen", "--in", room_file, "--out", tmp_path / "m.ffvox", "--config", cfg) == cli.EXIT_DATA


def test_flags_override_config(tmp_path, room_file):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 1, "diameter": 8, "total_step": 30, "target_ratio": None}))
    out = tmp_path / "m.ffvox"
    assert run("maskgen", "--in", room_file, "--out", out, "--config", cfg, "--diameter", 10) == 0
    side = json.loads((tmp_path / "m.ffvox.json").read_text())
    assert side["config"]["diameter"] == 10
    assert side["config"]["seed"] == 1 and side["config"]["total_step"] == 30


def _pipeline(tmp_path, name, room_file, extra=()):
    out = tmp_path / name
    cfg = tmp_path / "pipe.json"
    cfg.write_text(json.dumps({"inputs": [str(room_file)], "seed": 5, "num_cameras": 2,
                               "chamfer_points": 5000, "width": 80, "height": 64,
                               "fx": 72.5, "fy": 72.5, "cx": 40, "cy": 32}))
    assert run("pipeline", "--config", cfg, "--out", out, *extra) == 0
    return out, json.loads((out / "manifest.json").read_text())


@pytest.mark.slow
def test_pipeline_deterministic(tmp_path, room_file, monkeypatch):
    a_dir, a = _pipeline(tmp_path, "a", room_file)
    monkeypatch.setenv("FFKIT_THREADS", "1")
    _, b = _pipeline(tmp_path, "b", room_file)
    assert a["files"] == b["files"]
    assert a["config"] == b["config"]
    assert a["config"]["seed"] == 5 and a["config"]["voxel_size"] == 0.02
    kinds = {p.rsplit(".", 1)[1] for p in a["files"]}
    assert {"ffvox", "ply", "ppm", "pgm", "json"} <= kinds
    for rel, digest in a["files"].items():
        assert cli.sha256_file(a_dir / rel) == digest
    report = next(p for p in a["files"] if p.endswith("report.json"))
    r = json.loads((a_dir / report).read_text())
    assert 0.0 <= r["iou"] <= 1.0 and r["provenance"]["num_cameras"] == 2


def test_threads_env(monkeypatch):
    from ffkit.metrics import worker_count

    monkeypatch.setenv("FFKIT_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("FFKIT_THREADS", "0")
    assert worker_count() >= 1
