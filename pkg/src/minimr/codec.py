"""Entry batch wire format.

Each entry is a little-endian u32 key length, the key bytes, then the
value as a little-endian signed 64-bit integer.  Entries are simply
concatenated; an empty batch is empty bytes.
"""
from __future__ import annotations

import struct
from typing import Iterable

from .errors import DecodeError

_LEN = struct.Struct("<I")
_VAL = struct.Struct("<q")
ENTRY_OVERHEAD = _LEN.size + _VAL.size


def encode_entries(entries: Iterable[tuple[bytes, int]]) -> bytes:
    parts = []
    for key, value in entries:
        if len(key) >= 1 << 32:
            raise ValueError("key longer than 2**32 - 1 bytes")
        parts.append(_LEN.pack(len(key)))
        parts.append(key)
        parts.append(_VAL.pack(value))
    return b"".join(parts)


def decode_entries(data: bytes) -> list[tuple[bytes, int]]:
    out = []
    view = memoryview(data)
    pos, end = 0, len(data)
    while pos < end:
        if end - pos < _LEN.size:
            raise DecodeError(f"truncated key length at offset {pos}")
        (klen,) = _LEN.unpack_from(view, pos)
        kstart = pos + _LEN.size
        vstart = kstart + klen
        if vstart + _VAL.size > end:
            raise DecodeError(f"truncated entry at offset {pos}")
        (value,) = _VAL.unpack_from(view, vstart)
        out.append((bytes(view[kstart:vstart]), value))
        pos = vstart + _VAL.size
    return out
