"""File formats: VGRID volumes, OBJ/OFF meshes, network parameters, JSON reports.

VGRID is a JSON header (``<stem>.vgrid``) next to a raw little-endian
payload (``<stem>.raw``) in x-fastest order.  Parameter files are a magic
line, a uint64 manifest length, a JSON manifest and a float64 payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .mesh import TriangleMesh
from .network import LAYERS, DeformNetParams, NetHyper
from .volume import LabelMask, Volume

VGRID_VERSION = 1
_DTYPES = {"f32": "<f4", "f64": "<f8", "u8": "u1"}
PARAMS_MAGIC = b"SFNETv1\n"


class FormatError(ValueError):
    """Malformed file; ``offset`` is the byte position of the problem."""

    def __init__(self, path, offset, msg):
        super().__init__(f"{path}: byte {offset}: {msg}")
        self.offset = offset


# --------------------------------------------------------------------------
# VGRID

def write_vgrid(path, vol, dtype: str | None = None) -> Path:
    """Write a Volume (default f64) or LabelMask (u8)."""
    path = Path(path)
    if isinstance(vol, LabelMask):
        arr, spacing, dtype = vol.labels, 1.0, dtype or "u8"
    else:
        arr, spacing, dtype = vol.data, vol.spacing, dtype or "f64"
    if dtype not in _DTYPES:
        raise ValueError(f"dtype must be one of {sorted(_DTYPES)}")
    raw = path.with_suffix(".raw")
    header = {
        "format": "VGRID",
        "version": VGRID_VERSION,
        "dims": list(arr.shape),
        "spacing": float(spacing),
        "dtype": dtype,
        "order": "x-fastest",
        "payload": raw.name,
    }
    path.write_text(json.dumps(header, indent=2) + "\n")
    raw.write_bytes(np.asarray(arr).ravel(order="F").astype(_DTYPES[dtype]).tobytes())
    return path


def read_vgrid(path, as_mask: bool = False):
    path = Path(path)
    text = path.read_bytes()
    try:
        header = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(path, e.pos, f"header is not JSON ({e.msg})") from None
    if not isinstance(header, dict) or header.get("format") != "VGRID":
        raise FormatError(path, 0, "missing VGRID format tag")
    if header.get("version") != VGRID_VERSION:
        raise FormatError(path, 0, f"unsupported version {header.get('version')}")
    dtype = header.get("dtype")
    if dtype not in _DTYPES or header.get("order") != "x-fastest":
        raise FormatError(path, 0, f"bad dtype/order {dtype!r}/{header.get('order')!r}")
    dims = tuple(int(d) for d in header["dims"])
    raw = path.parent / header["payload"]
    payload = raw.read_bytes()
    itemsize = np.dtype(_DTYPES[dtype]).itemsize
    expected = int(np.prod(dims)) * itemsize
    if len(payload) != expected:
        raise FormatError(raw, min(len(payload), expected), f"payload has {len(payload)} bytes, expected {expected}")
    flat = np.frombuffer(payload, dtype=_DTYPES[dtype])
    arr = flat.reshape(dims, order="F")
    if as_mask or dtype == "u8":
        alphabet = tuple(int(v) for v in np.union1d(np.unique(arr), [0, 1, 2]))
        return LabelMask(np.ascontiguousarray(arr), alphabet=alphabet)
    return Volume(np.ascontiguousarray(arr, dtype=np.float64), header.get("spacing", 1.0))


# --------------------------------------------------------------------------
# meshes

def write_obj(path, mesh: TriangleMesh) -> Path:
    path = Path(path)
    with path.open("w") as f:
        for v in mesh.vertices:
            f.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for t in mesh.faces + 1:
            f.write(f"f {t[0]} {t[1]} {t[2]}\n")
    return path


def read_obj(path) -> TriangleMesh:
    path = Path(path)
    verts, faces = [], []
    offset = 0
    with path.open("rb") as f:
        for line in f:
            parts = line.split()
            try:
                if parts and parts[0] == b"v":
                    verts.append([float(x) for x in parts[1:4]])
                elif parts and parts[0] == b"f":
                    idx = [int(p.split(b"/")[0]) for p in parts[1:]]
                    if len(idx) != 3:
                        raise ValueError("only triangles are supported")
                    faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
            except ValueError as e:
                raise FormatError(path, offset, str(e)) from None
            offset += len(line)
    return TriangleMesh(np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def write_off(path, mesh: TriangleMesh) -> Path:
    path = Path(path)
    with path.open("w") as f:
        f.write(f"OFF\n{mesh.n_vertices} {mesh.n_faces} 0\n")
        for v in mesh.vertices:
            f.write(f"{float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for t in mesh.faces:
            f.write(f"3 {t[0]} {t[1]} {t[2]}\n")
    return path


def read_off(path) -> TriangleMesh:
    path = Path(path)
    data = path.read_bytes()
    if not data.startswith(b"OFF"):
        raise FormatError(path, 0, "missing OFF tag")
    tokens, offsets = [], []
    pos = 3
    k = 0
    for line in data[3:].splitlines(keepends=True):
        body = line.split(b"#")[0]
        col = 0
        for tok in body.split():
            col = body.index(tok, col)
            tokens.append(tok)
            offsets.append(pos + col)
            col += len(tok)
        pos += len(line)
    try:
        nv, nf = int(tokens[0]), int(tokens[1])
        k = 3
        verts = np.array([float(t) for t in tokens[k : k + 3 * nv]]).reshape(nv, 3)
        k += 3 * nv
        faces = []
        for _ in range(nf):
            n = int(tokens[k])
            if n != 3:
                raise FormatError(path, offsets[k], "only triangles are supported")
            faces.append([int(t) for t in tokens[k + 1 : k + 4]])
            k += 4
    except (IndexError, ValueError) as e:
        if isinstance(e, FormatError):
            raise
        at = offsets[min(len(offsets) - 1, k)] if offsets else 3
        raise FormatError(path, at, f"truncated or malformed body ({e})") from None
    return TriangleMesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3))


def read_mesh(path) -> TriangleMesh:
    return read_off(path) if Path(path).suffix.lower() == ".off" else read_obj(path)


def write_mesh(path, mesh) -> Path:
    return write_off(path, mesh) if Path(path).suffix.lower() == ".off" else write_obj(path, mesh)


# --------------------------------------------------------------------------
# network parameters

def params_to_bytes(params: DeformNetParams) -> bytes:
    hp = params.hyper
    manifest = {
        "format": "SFNET",
        "version": 1,
        "hyper": {"Q": hp.Q, "K": hp.K, "C": hp.C, "C_mid": hp.C_mid, "H": hp.H, "activation": hp.activation, "slope": hp.slope},
        "arrays": [{"path": p, "shape": list(a.shape)} for p, a in params.arrays()],
        "dtype": "<f8",
    }
    man = json.dumps(manifest, sort_keys=True).encode()
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in params.arrays())
    return PARAMS_MAGIC + struct.pack("<Q", len(man)) + man + payload


def params_from_bytes(data: bytes, source="<bytes>") -> DeformNetParams:
    if not data.startswith(PARAMS_MAGIC):
        raise FormatError(source, 0, "bad magic tag")
    pos = len(PARAMS_MAGIC)
    if len(data) < pos + 8:
        raise FormatError(source, pos, "truncated manifest length")
    (n,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    try:
        manifest = json.loads(data[pos : pos + n])
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise FormatError(source, pos + getattr(e, "pos", 0), "manifest is not JSON") from None
    pos += n
    hyper = NetHyper(**manifest["hyper"])
    W, b = {}, {}
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) * 8
        if pos + size > len(data):
            raise FormatError(source, pos, f"payload truncated in {entry['path']}")
        arr = np.frombuffer(data, dtype="<f8", count=size // 8, offset=pos).reshape(shape).astype(np.float64)
        kind, layer = entry["path"].split(".")
        (W if kind == "W" else b)[layer] = arr
        pos += size
    if pos != len(data):
        raise FormatError(source, pos, "trailing bytes after payload")
    missing = [l for l in LAYERS if l not in W or l not in b]
    if missing:
        raise FormatError(source, 0, f"missing layers {missing}")
    return DeformNetParams(hyper, W, b)


def save_params(path, params: DeformNetParams) -> Path:
    path = Path(path)
    path.write_bytes(params_to_bytes(params))
    return path


def load_params(path) -> DeformNetParams:
    path = Path(path)
    return params_from_bytes(path.read_bytes(), path)


# --------------------------------------------------------------------------
# JSON

def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")
