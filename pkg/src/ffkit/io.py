"""File formats: ``.ffvox`` scenes, PLY meshes, Netpbm images, camera and report JSON."""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .geometry import TriangleMesh
from .scene import GridMeta, Scene

FFVOX_MAGIC = b"FFVX"
FFVOX_VERSION = 1
CH_TSDF, CH_COLOR, CH_MASK, CH_KNOWN = 1, 2, 4, 8
ALL_CHANNELS = CH_TSDF | CH_COLOR | CH_MASK | CH_KNOWN
_HEADER = struct.Struct("<4sI3if3ffI")
HEADER_SIZE = _HEADER.size  # 44


class FormatError(ValueError):
    pass


# ---------------------------------------------------------------- ffvox

def ffvox_bytes(scene: Scene) -> bytes:
    m = scene.meta
    header = _HEADER.pack(FFVOX_MAGIC, FFVOX_VERSION, *m.dims, m.voxel_size, *m.origin,
                          scene.trunc, ALL_CHANNELS)
    parts = [
        header,
        scene.tsdf.astype("<f4").ravel(order="F").tobytes(),
        np.ascontiguousarray(scene.color.transpose(2, 1, 0, 3)).tobytes(),
        scene.mask.astype(np.uint8).ravel(order="F").tobytes(),
        scene.known.astype(np.uint8).ravel(order="F").tobytes(),
    ]
    return b"".join(parts)


def write_ffvox(scene: Scene, path) -> None:
    with open(path, "wb") as f:
        f.write(ffvox_bytes(scene))


def parse_ffvox(buf: bytes, name: str = "<bytes>") -> Scene:
    if len(buf) < HEADER_SIZE:
        raise FormatError(f"{name}: truncated header at offset {len(buf)} (need {HEADER_SIZE} bytes)")
    magic, version, nx, ny, nz, vs, ox, oy, oz, trunc, flags = _HEADER.unpack_from(buf, 0)
    if magic != FFVOX_MAGIC:
        raise FormatError(f"{name}: bad magic at offset 0 ({magic!r})")
    if version != FFVOX_VERSION:
        raise FormatError(f"{name}: unsupported version {version} at offset 4")
    if min(nx, ny, nz) < 1:
        raise FormatError(f"{name}: invalid dims ({nx}, {ny}, {nz}) at offset 8")
    if not vs > 0:
        raise FormatError(f"{name}: invalid voxel_size {vs} at offset 20")
    if flags & ~ALL_CHANNELS:
        raise FormatError(f"{name}: unknown channel flags {flags:#x} at offset 40")
    dims = (nx, ny, nz)
    n = nx * ny * nz
    off = HEADER_SIZE

    def take(field, nbytes):
        nonlocal off
        if off + nbytes > len(buf):
            raise FormatError(f"{name}: truncated {field} channel at offset {off} "
                              f"(need {nbytes} bytes, have {len(buf) - off})")
        chunk = buf[off:off + nbytes]
        off += nbytes
        return chunk

    meta = GridMeta(dims, vs, (ox, oy, oz))
    tsdf = np.full(dims, trunc, np.float32)
    color = np.zeros(dims + (3,), np.uint8)
    mask = np.zeros(dims, bool)
    known = np.zeros(dims, bool)
    if flags & CH_TSDF:
        tsdf = np.frombuffer(take("tsdf", 4 * n), "<f4").reshape(dims, order="F").astype(np.float32)
    if flags & CH_COLOR:
        color = np.frombuffer(take("color", 3 * n), np.uint8).reshape(nz, ny, nx, 3).transpose(2, 1, 0, 3)
    if flags & CH_MASK:
        mask = np.frombuffer(take("mask", n), np.uint8).reshape(dims, order="F").astype(bool)
    if flags & CH_KNOWN:
        known = np.frombuffer(take("known", n), np.uint8).reshape(dims, order="F").astype(bool)
    if off != len(buf):
        raise FormatError(f"{name}: {len(buf) - off} trailing bytes at offset {off}")
    try:
        return Scene(meta, tsdf, color, mask, known, trunc)
    except ValueError as e:
        raise FormatError(f"{name}: {e}") from e


def read_ffvox(path) -> Scene:
    with open(path, "rb") as f:
        return parse_ffvox(f.read(), os.fspath(path))


# ---------------------------------------------------------------- PLY

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_ply_header(f, name):
    if f.readline().strip() != b"ply":
        raise FormatError(f"{name}: not a PLY file")
    fmt = None
    elements = []  # (name, count, [(prop, dtype) or (prop, ('list', count_t, item_t))])
    while True:
        line = f.readline()
        if not line:
            raise FormatError(f"{name}: missing end_header")
        tok = line.decode("ascii", "replace").split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if tok[1] == "list":
                elements[-1][2].append((tok[4], ("list", _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]])))
            else:
                elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]]))
        elif tok[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian"):
        raise FormatError(f"{name}: unsupported PLY format {fmt!r}")
    return fmt, elements


def _read_binary_element(f, count, props, name):
    if all(not isinstance(t, tuple) for _, t in props):
        dt = np.dtype([(p, "<" + t) for p, t in props])
        data = np.frombuffer(f.read(dt.itemsize * count), dtype=dt, count=count)
        return {p: data[p] for p, _ in props}
    out = {p: [] for p, _ in props}
    for _ in range(count):
        for p, t in props:
            if isinstance(t, tuple):
                ct = np.dtype("<" + t[1])
                k = int(np.frombuffer(f.read(ct.itemsize), ct)[0])
                it = np.dtype("<" + t[2])
                out[p].append(np.frombuffer(f.read(it.itemsize * k), it))
            else:
                dt = np.dtype("<" + t)
                out[p].append(np.frombuffer(f.read(dt.itemsize), dt)[0])
    return out


def _read_ascii_element(f, count, props):
    out = {p: [] for p, _ in props}
    for _ in range(count):
        vals = f.readline().split()
        i = 0
        for p, t in props:
            if isinstance(t, tuple):
                k = int(vals[i])
                out[p].append(np.array([float(v) for v in vals[i + 1:i + 1 + k]]))
                i += 1 + k
            else:
                out[p].append(float(vals[i]))
                i += 1
    return out


def _triangulate(polys) -> np.ndarray:
    tris = []
    for poly in polys:
        poly = np.asarray(poly, dtype=np.int64)
        for k in range(1, len(poly) - 1):
            tris.append((poly[0], poly[k], poly[k + 1]))
    return np.array(tris, dtype=np.int64).reshape(-1, 3)


def read_ply(path) -> TriangleMesh:
    """Vertices with x/y/z (+ red/green/blue) and faces with vertex_indices; polygons are fanned."""
    name = os.fspath(path)
    with open(path, "rb") as f:
        fmt, elements = _parse_ply_header(f, name)
        data = {}
        for el, count, props in elements:
            if fmt == "ascii":
                data[el] = _read_ascii_element(f, count, props)
            else:
                data[el] = _read_binary_element(f, count, props, name)
    if "vertex" not in data:
        raise FormatError(f"{name}: no vertex element")
    v = data["vertex"]
    verts = np.stack([np.asarray(v[k], dtype=np.float64) for k in ("x", "y", "z")], axis=1)
    if all(k in v for k in ("red", "green", "blue")):
        colors = np.stack([np.asarray(v[k], dtype=np.float64) for k in ("red", "green", "blue")], axis=1)
        colors = np.clip(np.rint(colors), 0, 255).astype(np.uint8)
    else:
        colors = None
    faces = np.zeros((0, 3), np.int64)
    if "face" in data:
        fd = data["face"]
        key = "vertex_indices" if "vertex_indices" in fd else ("vertex_index" if "vertex_index" in fd else None)
        if key is None:
            raise FormatError(f"{name}: face element lacks vertex_indices")
        faces = _triangulate(fd[key])
    return TriangleMesh(verts, faces, colors)


def ply_bytes(mesh: TriangleMesh) -> bytes:
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(mesh.vertices)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        f"element face {len(mesh.faces)}\n"
        "property list uchar int vertex_indices\nend_header\n"
    ).encode("ascii")
    vdt = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("r", "u1"), ("g", "u1"), ("b", "u1")])
    vert = np.empty(len(mesh.vertices), dtype=vdt)
    for i, k in enumerate("xyz"):
        vert[k] = mesh.vertices[:, i]
    for i, k in enumerate("rgb"):
        vert[k] = mesh.vertex_colors[:, i]
    fdt = np.dtype([("n", "u1"), ("v", "<i4", (3,))])
    face = np.empty(len(mesh.faces), dtype=fdt)
    face["n"] = 3
    face["v"] = mesh.faces
    return header + vert.tobytes() + face.tobytes()


def write_ply(mesh: TriangleMesh, path, binary: bool = True) -> None:
    if binary:
        with open(path, "wb") as f:
            f.write(ply_bytes(mesh))
        return
    lines = [
        "ply", "format ascii 1.0", f"element vertex {len(mesh.vertices)}",
        "property float x", "property float y", "property float z",
        "property uchar red", "property uchar green", "property uchar blue",
        f"element face {len(mesh.faces)}", "property list uchar int vertex_indices", "end_header",
    ]
    lines += [f"{x!r} {y!r} {z!r} {r} {g} {b}" for (x, y, z), (r, g, b)
              in zip(mesh.vertices.tolist(), mesh.vertex_colors.tolist())]
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.faces.tolist()]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------- Netpbm

def write_ppm(image: np.ndarray, path) -> None:
    img = np.ascontiguousarray(image, dtype=np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def write_pgm(image: np.ndarray, path) -> None:
    """8-bit or 16-bit (big-endian samples, per Netpbm) grayscale."""
    img = np.asarray(image)
    h, w = img.shape
    if img.dtype == np.uint16:
        body, maxval = img.astype(">u2").tobytes(), 65535
    else:
        body, maxval = img.astype(np.uint8).tobytes(), 255
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii") + body)


def _read_netpbm_header(buf: bytes):
    tokens, i = [], 0
    while len(tokens) < 4:
        while buf[i:i + 1].isspace():
            i += 1
        if buf[i:i + 1] == b"#":
            while buf[i:i + 1] not in (b"\n", b""):
                i += 1
            continue
        j = i
        while not buf[j:j + 1].isspace():
            j += 1
        tokens.append(buf[i:j])
        i = j
    return tokens, i + 1


def read_netpbm(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    (magic, w, h, maxval), start = _read_netpbm_header(buf)
    w, h, maxval = int(w), int(h), int(maxval)
    dt = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    if magic == b"P6":
        return np.frombuffer(buf, dt, count=w * h * 3, offset=start).reshape(h, w, 3).astype(dt.newbyteorder("="))
    if magic == b"P5":
        return np.frombuffer(buf, dt, count=w * h, offset=start).reshape(h, w).astype(dt.newbyteorder("="))
    raise FormatError(f"{path}: unsupported Netpbm type {magic!r}")


def depth_to_mm(depth: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(depth * 1000.0), 0, 65535).astype(np.uint16)


def write_frame(frame, prefix) -> list[str]:
    """Color PPM, depth PGM (16-bit mm) and validity PGM (0/255); returns written paths."""
    prefix = os.fspath(prefix)
    paths = [prefix + "_color.ppm", prefix + "_depth.pgm", prefix + "_valid.pgm"]
    write_ppm(frame.color, paths[0])
    write_pgm(depth_to_mm(frame.depth), paths[1])
    write_pgm(frame.valid.astype(np.uint8) * 255, paths[2])
    return paths


def write_edges(edges, path) -> None:
    e = getattr(edges, "edges", edges)
    write_pgm(e.astype(np.uint8) * 255, path)


# ---------------------------------------------------------------- JSON

def dump_json(obj, path) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def load_json(path):
    with open(path) as f:
        return json.load(f)


def write_cameras(cameras, path) -> None:
    dump_json([c.to_dict() for c in cameras], path)


def read_cameras(path):
    from .renderer import Camera

    data = load_json(path)
    if isinstance(data, dict):
        data = data.get("cameras", [data])
    return [Camera.from_dict(d) for d in data]


def write_report(report, path) -> None:
    dump_json(report.to_dict(), path)


def read_report(path):
    from .metrics import MetricsReport

    return MetricsReport.from_dict(load_json(path))
