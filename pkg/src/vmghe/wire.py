"""Canonical binary encoding shared by keys, ciphertexts and shares.

Every blob starts with ``b"VMG"``, a format version byte and a type byte.
Integers are little-endian; strings and byte fields are length-prefixed.
"""

from __future__ import annotations

import struct

MAGIC = b"VMG"
VERSION = 1

TYPE_SECRET_KEY = 1
TYPE_PUBLIC_SHARE = 2
TYPE_CIPHERTEXT = 3
TYPE_DECRYPTION_SHARE = 4
TYPE_COIN_SHARE = 5
TYPE_CROSS_SHARE = 6
TYPE_GROUP_PUBLIC = 7
TYPE_AUTHENTICATOR = 8
TYPE_PARAMS = 9
TYPE_SETGEN = 10


class Writer:
    def __init__(self, type_code: int):
        self.buf = bytearray(MAGIC + bytes([VERSION, type_code]))

    def u8(self, v: int) -> "Writer":
        self.buf += struct.pack("<B", v)
        return self

    def u32(self, v: int) -> "Writer":
        self.buf += struct.pack("<I", v)
        return self

    def u64(self, v: int) -> "Writer":
        self.buf += struct.pack("<Q", v)
        return self

    def blob(self, b: bytes) -> "Writer":
        self.buf += struct.pack("<I", len(b)) + b
        return self

    def text(self, s: str) -> "Writer":
        return self.blob(s.encode())

    def getvalue(self) -> bytes:
        return bytes(self.buf)


class Reader:
    def __init__(self, data: bytes, type_code: int):
        if data[:3] != MAGIC:
            raise ValueError("not a vmghe blob")
        if data[3] != VERSION:
            raise ValueError(f"unsupported format version {data[3]}")
        if data[4] != type_code:
            raise ValueError(f"expected blob type {type_code}, got {data[4]}")
        self.data = data
        self.pos = 5

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError("truncated blob")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def blob(self) -> bytes:
        return self._take(self.u32())

    def text(self) -> str:
        return self.blob().decode()

    def done(self):
        if self.pos != len(self.data):
            raise ValueError("trailing bytes in blob")
