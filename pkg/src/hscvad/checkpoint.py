"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"HSCVAD"                      magic, 6 bytes
    u32  version                   currently 1
    u32  meta_len, meta_len bytes  UTF-8 JSON object (config snapshot, label maps)
    u32  n_arrays
    n_arrays times:
        u16 name_len, name bytes (UTF-8)
        u8  ndim
        ndim x u64 shape
        prod(shape) x f64 (little-endian, C order)

Arrays are written in sorted name order so equal states give equal bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError, UnsupportedVersionError

MAGIC = b"HSCVAD"
VERSION = 1


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    meta_bytes = json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(meta_bytes)), meta_bytes]
    parts.append(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype="<f8", order="C")  # keeps 0-d shapes
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint file")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"missing checkpoint: {path}")
    r = _Reader(path.read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not an HSCVAD checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {version} (expected {VERSION})")
    (meta_len,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint metadata: {exc}") from None
    (n,) = r.unpack("<I")
    arrays = {}
    for _ in range(n):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q")
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(r.take(8 * count), dtype="<f8")
        arrays[name] = data.reshape(shape).astype(np.float64)
    if r.pos != len(r.buf):
        raise CheckpointError("trailing bytes after last array")
    return arrays, meta
