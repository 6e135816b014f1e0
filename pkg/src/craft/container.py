"""Versioned binary container used for datasets, indexes and checkpoints.

Layout (all integers little-endian)::

    magic      4 bytes   b"CRFT"
    version    u16
    kind       4 bytes   b"DSET" | b"INDX" | b"CKPT"
    dims       3 x u64   kind-specific header dimensions
    meta_len   u64       followed by UTF-8 JSON (sorted keys)
    n_arrays   u32       then per array:
                           name_len u16, name (UTF-8),
                           ndim u8, shape ndim x u64,
                           row-major float64 payload
    n_ids      u64       then per id: len u32, UTF-8 bytes
    end        4 bytes   b"END!"

Writing the same content twice produces identical bytes.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"CRFT"
END = b"END!"
VERSION = 1
KINDS = (b"DSET", b"INDX", b"CKPT")


@dataclass
class Container:
    kind: bytes
    dims: tuple
    meta: dict = field(default_factory=dict)
    arrays: dict = field(default_factory=dict)
    ids: list = field(default_factory=list)


def to_bytes(c: Container) -> bytes:
    if c.kind not in KINDS:
        raise ValueError(f"unknown container kind {c.kind!r}")
    dims = tuple(int(d) for d in c.dims)
    if len(dims) != 3:
        raise ValueError("container header carries exactly three dimensions")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", VERSION))
    buf.write(c.kind)
    buf.write(struct.pack("<3Q", *dims))
    meta = json.dumps(c.meta, sort_keys=True, separators=(",", ":")).encode()
    buf.write(struct.pack("<Q", len(meta)))
    buf.write(meta)
    buf.write(struct.pack("<I", len(c.arrays)))
    for name, arr in c.arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        key = name.encode()
        buf.write(struct.pack("<H", len(key)))
        buf.write(key)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    buf.write(struct.pack("<Q", len(c.ids)))
    for ident in c.ids:
        raw = str(ident).encode()
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
    buf.write(END)
    return buf.getvalue()


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(f"file truncated while reading {what}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def from_bytes(data: bytes, expect_kind: bytes | None = None) -> Container:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("not a craft container (bad magic)")
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise FormatError(f"unsupported container version {version} (expected {VERSION})")
    kind = r.take(4, "kind")
    if kind not in KINDS:
        raise FormatError(f"unknown container kind {kind!r}")
    if expect_kind is not None and kind != expect_kind:
        raise FormatError(f"expected a {expect_kind.decode()} container, found {kind.decode()}")
    dims = r.unpack("<3Q", "header dims")
    (meta_len,) = r.unpack("<Q", "metadata length")
    try:
        meta = json.loads(r.take(meta_len, "metadata").decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt metadata block: {exc}") from None
    (n_arrays,) = r.unpack("<I", "array count")
    arrays = {}
    for _ in range(n_arrays):
        (name_len,) = r.unpack("<H", "array name length")
        name = r.take(name_len, "array name").decode()
        (ndim,) = r.unpack("<B", "array rank")
        shape = r.unpack(f"<{ndim}Q", f"shape of {name}")
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        raw = r.take(nbytes, f"payload of {name}")
        arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    (n_ids,) = r.unpack("<Q", "id count")
    ids = []
    for _ in range(n_ids):
        (n,) = r.unpack("<I", "id length")
        ids.append(r.take(n, "id").decode())
    if r.take(4, "end marker") != END:
        raise FormatError("missing end marker")
    if r.pos != len(data):
        raise FormatError("trailing bytes after end marker")
    return Container(kind=kind, dims=tuple(dims), meta=meta, arrays=arrays, ids=ids)


def write(path, c: Container):
    Path(path).write_bytes(to_bytes(c))


def read(path, expect_kind=None) -> Container:
    return from_bytes(Path(path).read_bytes(), expect_kind)
