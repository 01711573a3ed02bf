import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ffkit.geometry import TriangleMesh
from ffkit.io import (HEADER_SIZE, FormatError, ffvox_bytes, parse_ffvox, read_cameras, read_ffvox,
                      read_netpbm, read_ply, read_report, write_cameras, write_ffvox, write_frame, write_pgm,
                      write_ply, write_ppm, write_report)
from ffkit.metrics import MetricsReport
from ffkit.renderer import Camera, RenderedFrame, look_at
from ffkit.scene import GridMeta, Scene, new_scene
from ffkit.synthetic import box_mesh

import expected


@st.composite
def scenes(draw):
    dims = tuple(draw(st.integers(1, 6)) for _ in range(3))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    vs = draw(st.floats(0.001, 1.0))
    origin = tuple(draw(st.floats(-10, 10)) for _ in range(3))
    tsdf = rng.uniform(-3, 3, dims).astype(np.float32)
    color = rng.integers(0, 256, dims + (3,), dtype=np.uint8)
    mask = rng.random(dims) < 0.3
    known = ~mask & (rng.random(dims) < 0.8)
    return Scene(GridMeta(dims, vs, origin), tsdf, color, mask, known, draw(st.floats(0.5, 8)))


@settings(max_examples=60, deadline=None)
@given(scenes())
def test_ffvox_round_trip(s):
    back = parse_ffvox(ffvox_bytes(s))
    assert back.equals(s)
    assert ffvox_bytes(back) == ffvox_bytes(s)


def test_ffvox_file_round_trip(tmp_path, room):
    p = tmp_path / "r.ffvox"
    write_ffvox(room, p)
    assert read_ffvox(p).equals(room)
    assert p.stat().st_size == expected.FFVOX_64_64_128_BYTES


def test_ffvox_layout_is_little_endian_x_fastest():
    s = new_scene(GridMeta((2, 3, 1), 0.5, (1.0, 2.0, 3.0)))
    tsdf = np.arange(6, dtype=np.float32).reshape(2, 3, 1)
    color = np.zeros((2, 3, 1, 3), np.uint8)
    color[1, 0, 0] = (7, 8, 9)
    s = s.replace(tsdf=tsdf, color=color)
    buf = ffvox_bytes(s)
    assert buf[:4] == b"FFVX"
    assert struct.unpack_from("<I3i", buf, 4) == (1, 2, 3, 1)
    assert struct.unpack_from("<f", buf, 20)[0] == 0.5
    vals = struct.unpack_from("<6f", buf, HEADER_SIZE)
    # x varies fastest: (0,0),(1,0),(0,1),(1,1),...
    assert vals == (0.0, 3.0, 1.0, 4.0, 2.0, 5.0)
    assert buf[HEADER_SIZE + 24 + 3:HEADER_SIZE + 24 + 6] == bytes([7, 8, 9])
    assert len(buf) == HEADER_SIZE + 6 * 9


def test_ffvox_canonical(room):
    copy = Scene(room.meta, np.array(room.tsdf), np.array(room.color), np.array(room.mask),
                 np.array(room.known), room.trunc)
    assert ffvox_bytes(copy) == ffvox_bytes(room)


def test_bad_magic(tmp_path, plane):
    p = tmp_path / "x.ffvox"
    p.write_bytes(b"XXXX" + ffvox_bytes(plane)[4:])
    with pytest.raises(FormatError, match="bad magic at offset 0"):
        read_ffvox(p)


def test_bad_version(plane):
    buf = bytearray(ffvox_bytes(plane))
    buf[4:8] = struct.pack("<I", 9)
    with pytest.raises(FormatError, match="version 9 at offset 4"):
        parse_ffvox(bytes(buf))


@pytest.mark.parametrize("cut, field", [(10, "header"), (HEADER_SIZE + 5, "tsdf"), (-1, "known")])
def test_truncated(plane, cut, field):
    buf = ffvox_bytes(plane)[:cut]
    with pytest.raises(FormatError, match=f"truncated {field}.* at offset"):
        parse_ffvox(buf)


def test_trailing_bytes_rejected(plane):
    with pytest.raises(FormatError, match="trailing"):
        parse_ffvox(ffvox_bytes(plane) + b"\0")


def test_nonpositive_dims_rejected(plane):
    buf = bytearray(ffvox_bytes(plane))
    buf[8:12] = struct.pack("<i", 0)
    with pytest.raises(FormatError, match="offset 8"):
        parse_ffvox(bytes(buf))


def test_masked_and_known_overlap_rejected():
    s = new_scene(GridMeta((2, 2, 2)))
    buf = bytearray(ffvox_bytes(s))
    n = 8
    buf[HEADER_SIZE + 7 * n] = 1  # mask[0]
    buf[HEADER_SIZE + 8 * n] = 1  # known[0]
    with pytest.raises(FormatError):
        parse_ffvox(bytes(buf))


@pytest.mark.parametrize("binary", [True, False])
def test_ply_round_trip(tmp_path, binary):
    mesh = box_mesh([0.1, 0.2, 0.3], [0.5, 0.75, 1.0], (10, 20, 30))
    p = tmp_path / "m.ply"
    write_ply(mesh, p, binary=binary)
    back = read_ply(p)
    assert np.array_equal(back.faces, mesh.faces)
    assert np.array_equal(back.vertex_colors, mesh.vertex_colors)
    assert np.allclose(back.vertices, mesh.vertices, atol=1e-6)


def test_ply_reads_quads_and_extra_properties(tmp_path):
    p = tmp_path / "q.ply"
    p.write_text("\n".join([
        "ply", "format ascii 1.0", "comment made by hand",
        "element vertex 4", "property float x", "property float y", "property float z", "property float nx",
        "element face 1", "property list uchar int vertex_indices", "end_header",
        "0 0 0 1", "1 0 0 1", "1 1 0 1", "0 1 0 1", "4 0 1 2 3", ""]))
    m = read_ply(p)
    assert m.faces.shape == (2, 3)
    assert np.all(m.vertex_colors == 0)


def test_ply_binary_is_deterministic(tmp_path):
    mesh = box_mesh([0, 0, 0], [1, 1, 1])
    a, b = tmp_path / "a.ply", tmp_path / "b.ply"
    write_ply(mesh, a)
    write_ply(TriangleMesh(mesh.vertices.copy(), mesh.faces.copy(), mesh.vertex_colors.copy()), b)
    assert a.read_bytes() == b.read_bytes()


def test_netpbm_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    rgb = rng.integers(0, 256, (5, 7, 3), dtype=np.uint8)
    g8 = rng.integers(0, 256, (5, 7), dtype=np.uint8)
    g16 = rng.integers(0, 65536, (5, 7), dtype=np.uint16)
    write_ppm(rgb, tmp_path / "a.ppm")
    write_pgm(g8, tmp_path / "b.pgm")
    write_pgm(g16, tmp_path / "c.pgm")
    assert np.array_equal(read_netpbm(tmp_path / "a.ppm"), rgb)
    assert np.array_equal(read_netpbm(tmp_path / "b.pgm"), g8)
    assert np.array_equal(read_netpbm(tmp_path / "c.pgm"), g16)
    # 16-bit samples are big-endian on disk
    raw = (tmp_path / "c.pgm").read_bytes()
    assert raw[-2:] == int(g16[-1, -1]).to_bytes(2, "big")


def test_write_frame(tmp_path):
    frame = RenderedFrame(np.full((4, 5, 3), 9, np.uint8), np.full((4, 5), 1.2345),
                          np.zeros((4, 5, 3)), np.ones((4, 5), bool))
    paths = write_frame(frame, tmp_path / "v")
    assert [p.rsplit("_", 1)[1] for p in paths] == ["color.ppm", "depth.pgm", "valid.pgm"]
    assert np.all(read_netpbm(paths[1]) == 1234)
    assert np.all(read_netpbm(paths[2]) == 255)


def test_cameras_round_trip(tmp_path):
    cams = [look_at([0.1, 0.2, 0.3], [1, 1, 1]), Camera(width=32, height=24, cx=16, cy=12)]
    write_cameras(cams, tmp_path / "c.json")
    back = read_cameras(tmp_path / "c.json")
    assert len(back) == 2
    for a, b in zip(cams, back):
        assert a.to_dict() == b.to_dict()


def test_report_round_trip(tmp_path):
    r = MetricsReport(0.5, 0.25, 1.5, 0.9, 0.8, 0.1, 0.05, 0.02, per_view=[{"ssim": 0.9}],
                      provenance={"seed": 3})
    write_report(r, tmp_path / "r.json")
    back = read_report(tmp_path / "r.json")
    assert back.to_dict() == r.to_dict()
    assert back.fid is None and back.feature_l1 is None
