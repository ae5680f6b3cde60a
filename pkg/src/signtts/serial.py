"""Single-file checkpoint container.

Layout, all integers little-endian uint32:

  magic "SRG1"
  header_len, then header_len bytes of UTF-8 JSON
  for each tensor, in the order of header["tensors"]:
      name_len, name bytes (UTF-8)
      ndim, then ndim dims
      prod(dims) float32 values

The header always carries ``format_version`` ("SRG1"), plus whatever the
caller stores (config hash, step, RNG state). Tensors are stored as
float32 exactly as trained, so save/load round-trips are bitwise.
Writes are atomic: temp file in the same directory, then rename.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointMismatchError, ContractError

MAGIC = b"SRG1"
FORMAT_VERSION = "SRG1"


def save_checkpoint(path: str | Path, header: dict,
                    tensors: dict[str, np.ndarray]):
    """Write header + named float32 tensors atomically."""
    path = Path(path)
    names = list(tensors)
    if len(set(names)) != len(names):
        raise ContractError("duplicate tensor names")
    full_header = dict(header)
    full_header["format_version"] = FORMAT_VERSION
    full_header["tensors"] = names
    header_bytes = json.dumps(full_header, sort_keys=True).encode("utf-8")

    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", len(header_bytes))
    blob += header_bytes
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        name_bytes = name.encode("utf-8")
        blob += struct.pack("<I", len(name_bytes))
        blob += name_bytes
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()

    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(bytes(blob))
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointMismatchError(f"{self.path}: truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a checkpoint; validates magic, version, names, and exact size."""
    path = Path(path)
    r = _Reader(path.read_bytes(), path)
    if r.take(4) != MAGIC:
        raise CheckpointMismatchError(f"{path}: bad magic, not a checkpoint")
    try:
        header = json.loads(r.take(r.u32()).decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as e:
        raise CheckpointMismatchError(f"{path}: unreadable header: {e}") from e
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointMismatchError(
            f"{path}: format_version {header.get('format_version')!r} unsupported")
    tensors: dict[str, np.ndarray] = {}
    for expected in header.get("tensors", []):
        name = r.take(r.u32()).decode("utf-8")
        if name != expected:
            raise CheckpointMismatchError(
                f"{path}: tensor order mismatch: {name!r} where {expected!r} expected")
        ndim = r.u32()
        shape = tuple(r.u32() for _ in range(ndim))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = r.take(4 * count)
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    if r.pos != len(r.data):
        raise CheckpointMismatchError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    return header, tensors
