"""The ``TTRZ1`` binary container, trace files and run manifests.

Container layout::

    b"TTRZ1"                      5 magic bytes
    uint64 little-endian          length of the metadata block in bytes
    UTF-8 JSON metadata           sorted keys; lists every array as name + shape
    float64 little-endian data    each array in C order, in the listed order

Metadata always carries ``version`` and ``kind`` (``dense``, ``tt_vector``,
``tt_matrix`` or ``network``). Floats are stored as raw bits, so a round
trip is bit-exact (NaN payloads included).
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContainerError
from .nn import DenseLayer, Network, TTLayer
from .tt import TTMatrix, TTVector

MAGIC = b"TTRZ1"
VERSION = 1
KINDS = ("dense", "tt_vector", "tt_matrix", "network")
_LEN = struct.Struct("<Q")
_F8 = np.dtype("<f8")


def atomic_write_bytes(path, data: bytes) -> None:
    """Write to a temporary file beside ``path`` and rename it into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# -- encode -----------------------------------------------------------------

def _tt_meta(m) -> dict:
    if isinstance(m, TTMatrix):
        return {"in_shape": list(m.in_shape), "out_shape": list(m.out_shape),
                "ranks": list(m.ranks)}
    return {"shape": list(m.shape), "ranks": list(m.ranks)}


def _describe(obj):
    """Metadata (without the array list) and the ordered arrays of a payload."""
    if isinstance(obj, TTVector):
        return "tt_vector", _tt_meta(obj), list(obj.cores)
    if isinstance(obj, TTMatrix):
        return "tt_matrix", _tt_meta(obj), list(obj.cores)
    if isinstance(obj, Network):
        layers, arrays = [], []
        for layer in obj.layers:
            if isinstance(layer, TTLayer):
                layers.append({"type": "tt", "activation": layer.activation,
                               **_tt_meta(layer.weight)})
            else:
                layers.append({"type": "dense", "activation": layer.activation,
                               "in_dim": layer.in_dim, "out_dim": layer.out_dim})
            arrays += layer.parameters()
        return "network", {"loss_kind": obj.loss_kind, "layers": layers}, arrays
    a = np.asarray(obj)
    if a.dtype.kind not in "fiub" or a.ndim == 0:
        raise ContainerError(f"cannot store object of type {type(obj).__name__}")
    return "dense", {}, [a]


def encode(obj) -> bytes:
    kind, meta, arrays = _describe(obj)
    arrays = [np.ascontiguousarray(a, dtype=_F8) for a in arrays]
    meta = dict(meta, version=VERSION, kind=kind,
                arrays=[{"shape": list(a.shape)} for a in arrays])
    header = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join([MAGIC, _LEN.pack(len(header)), header] + [a.tobytes() for a in arrays])


def write_container(path, obj) -> None:
    atomic_write_bytes(path, encode(obj))


# -- decode -----------------------------------------------------------------

def _corrupt(msg: str) -> ContainerError:
    return ContainerError(f"corrupt container: {msg}")


def decode_header(blob: bytes) -> tuple[dict, int]:
    if blob[:len(MAGIC)] != MAGIC:
        raise _corrupt("bad magic bytes")
    start = len(MAGIC) + _LEN.size
    if len(blob) < start:
        raise _corrupt("truncated header")
    (n,) = _LEN.unpack_from(blob, len(MAGIC))
    if len(blob) < start + n:
        raise _corrupt("truncated metadata")
    try:
        meta = json.loads(blob[start:start + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise _corrupt(f"unreadable metadata ({exc})") from None
    if not isinstance(meta, dict) or meta.get("kind") not in KINDS:
        raise _corrupt("unknown payload kind")
    if meta.get("version") != VERSION:
        raise ContainerError(f"unsupported container version {meta.get('version')!r}")
    return meta, start + n


def _arrays(blob: bytes, meta: dict, offset: int) -> list[np.ndarray]:
    out = []
    try:
        shapes = [tuple(int(d) for d in a["shape"]) for a in meta["arrays"]]
    except (KeyError, TypeError, ValueError):
        raise _corrupt("malformed array list") from None
    for shape in shapes:
        nbytes = int(np.prod(shape, dtype=np.int64)) * _F8.itemsize
        if offset + nbytes > len(blob):
            raise _corrupt("truncated payload")
        out.append(np.frombuffer(blob, _F8, count=nbytes // 8, offset=offset)
                   .reshape(shape).astype(np.float64))
        offset += nbytes
    if offset != len(blob):
        raise _corrupt(f"{len(blob) - offset} trailing bytes")
    return out


def decode(blob: bytes):
    meta, offset = decode_header(blob)
    arrays = _arrays(blob, meta, offset)
    kind = meta["kind"]
    try:
        if kind == "dense":
            (a,) = arrays
            return a
        if kind == "tt_vector":
            return TTVector(tuple(arrays))
        if kind == "tt_matrix":
            return TTMatrix(tuple(arrays))
        layers, pos = [], 0
        for spec in meta["layers"]:
            if spec["type"] == "tt":
                k = len(spec["ranks"]) - 1
                w = TTMatrix(tuple(arrays[pos:pos + k]))
                layers.append(TTLayer(w, arrays[pos + k], spec["activation"]))
                pos += k + 1
            else:
                layers.append(DenseLayer(arrays[pos], arrays[pos + 1], spec["activation"]))
                pos += 2
        if pos != len(arrays):
            raise _corrupt("array count does not match layer list")
        return Network(layers, meta["loss_kind"])
    except ContainerError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise _corrupt(f"inconsistent payload ({exc})") from None


def read_container(path):
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise ContainerError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return decode(blob)


def read_meta(path) -> dict:
    blob = Path(path).read_bytes()
    meta, offset = decode_header(blob)
    _arrays(blob, meta, offset)
    return meta


# -- traces and manifests ---------------------------------------------------

def parse_kv_line(line: str) -> dict:
    """Split ``a=1 b=x`` into a dict of strings."""
    out = {}
    for token in line.split():
        key, sep, value = token.partition("=")
        if not sep:
            raise ValueError(f"malformed trace token {token!r}")
        out[key] = value
    return out


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    command: list
    config: dict
    seed: int | None
    inputs: list
    outputs: dict = field(default_factory=dict)  # path -> sha256
    version: str = ""
    wall_clock_s: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))

    def write(self, path) -> None:
        atomic_write_text(path, self.to_json())
