"""Binary checkpoint files.

Layout (all integers little-endian uint32)::

    b"SIGF" | version | header length | JSON header | record count |
    records: name length | name (utf-8) | rank | dims... | float32 LE values
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from sgseg.errors import ParseError, ValidationError

MAGIC = b"SIGF"
VERSION = 1
_U32 = struct.Struct("<I")


def encode(tensors: dict[str, np.ndarray], header: dict[str, Any]) -> bytes:
    head = json.dumps(header, sort_keys=True).encode()
    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(head)), head, _U32.pack(len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        raw = name.encode()
        parts += [_U32.pack(len(raw)), raw, _U32.pack(arr.ndim)]
        parts += [_U32.pack(d) for d in arr.shape]
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data, self.pos, self.source = data, 0, source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ParseError(f"{self.source}: truncated at byte {self.pos}")
        out = self.data[self.pos: self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def decode(data: bytes, source: str = "<bytes>") -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    r = _Reader(data, source)
    if r.take(4) != MAGIC:
        raise ParseError(f"{source}: not a checkpoint (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise ValidationError(f"{source}: unsupported checkpoint version {version}")
    try:
        header = json.loads(r.take(r.u32()))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{source}: corrupt header ({exc})") from None
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode()
        shape = tuple(r.u32() for _ in range(r.u32()))
        count = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).copy()
    if r.pos != len(data):
        raise ParseError(f"{source}: {len(data) - r.pos} trailing bytes")
    return tensors, header


def save(path: str | Path, tensors: dict[str, np.ndarray], header: dict[str, Any]) -> Path:
    """Write atomically: a partial file never replaces a good one."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(tensors, header))
    tmp.replace(path)
    return path


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    path = Path(path)
    return decode(path.read_bytes(), str(path))
