"""Canonical byte encoding shared by envelopes, transactions and messages.

Fixed field order, big-endian fixed-width integers and u32 length-prefixed
byte fields, so identical values hash identically on every platform.
"""

from __future__ import annotations

import struct


def pack_u8(value: int) -> bytes:
    return struct.pack(">B", value)


def pack_u32(value: int) -> bytes:
    return struct.pack(">I", value)


def pack_u64(value: int) -> bytes:
    return struct.pack(">Q", value)


def pack_f64(value: float) -> bytes:
    return struct.pack(">d", value)


def pack_bytes(value: bytes) -> bytes:
    return pack_u32(len(value)) + value


def pack_str(value: str) -> bytes:
    return pack_bytes(value.encode("utf-8"))


class ByteReader:
    """Sequential reader over a canonical encoding."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise ValueError("truncated encoding")
        chunk = self._data[self._pos : self._pos + n]
        self._pos += n
        return chunk

    def u8(self) -> int:
        return struct.unpack(">B", self._take(1))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack(">d", self._take(8))[0]

    def raw(self, n: int) -> bytes:
        return self._take(n)

    def bytes_field(self) -> bytes:
        return self._take(self.u32())

    def str_field(self) -> str:
        return self.bytes_field().decode("utf-8")

    def at_end(self) -> bool:
        return self._pos == len(self._data)

    def expect_end(self) -> None:
        if not self.at_end():
            raise ValueError(f"{len(self._data) - self._pos} trailing bytes")
