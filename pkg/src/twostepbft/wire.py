"""Canonical binary encoding primitives.

Every protocol value encodes as a field-ordered concatenation of these
primitives, so two encoders can only agree byte for byte.  Integers are
unsigned 64-bit big-endian; variable-length byte strings carry a 4-byte
big-endian length prefix; sequences carry a 4-byte count prefix.
"""

from __future__ import annotations

import struct

from .errors import CodecError

_U64 = struct.Struct(">Q")
_U32 = struct.Struct(">I")


def u64(value: int) -> bytes:
    if value < 0 or value > 0xFFFFFFFFFFFFFFFF:
        raise CodecError(f"u64 out of range: {value}")
    return _U64.pack(value)


def blob(data: bytes) -> bytes:
    if len(data) > 0xFFFFFFFF:
        raise CodecError("blob too long")
    return _U32.pack(len(data)) + data


def vec(items: list[bytes]) -> bytes:
    # Items must already be self-delimiting encodings.
    return _U32.pack(len(items)) + b"".join(items)


class Reader:
    """Cursor over an encoded buffer; every read checks bounds."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def _take(self, count: int) -> bytes:
        end = self.pos + count
        if end > len(self.data):
            raise CodecError("truncated input")
        piece = self.data[self.pos : end]
        self.pos = end
        return piece

    def u64(self) -> int:
        return _U64.unpack(self._take(8))[0]

    def u32(self) -> int:
        return _U32.unpack(self._take(4))[0]

    def blob(self) -> bytes:
        return self._take(self.u32())

    def count(self) -> int:
        return self.u32()

    def done(self) -> bool:
        return self.pos == len(self.data)

    def expect_done(self) -> None:
        if not self.done():
            raise CodecError(f"{len(self.data) - self.pos} trailing bytes")
