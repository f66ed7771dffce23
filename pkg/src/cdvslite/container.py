"""Encoded-image container (``CDVZ1``); the byte layout is documented in docs/FORMAT.md."""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

from .compress import MODES, mode_index

MAGIC = b"CDVZ1"
_HEADER = struct.Struct(">5sBHHIII")  # magic, mode, width, height, model id, global len, local len
_TRAILER = struct.Struct(">I")
OVERHEAD = _HEADER.size + _TRAILER.size


class ContainerError(ValueError):
    pass


@dataclass(frozen=True)
class Container:
    mode: str
    width: int
    height: int
    model_id: int
    global_bytes: bytes
    local_bytes: bytes

    @property
    def payload_size(self) -> int:
        """Bytes counted against the mode budget (header and checksum excluded)."""
        return len(self.global_bytes) + len(self.local_bytes)

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(
            MAGIC,
            mode_index(self.mode),
            self.width,
            self.height,
            self.model_id,
            len(self.global_bytes),
            len(self.local_bytes),
        )
        body = head + self.global_bytes + self.local_bytes
        return body + _TRAILER.pack(zlib.crc32(body))

    @classmethod
    def from_bytes(cls, data: bytes) -> "Container":
        if len(data) < OVERHEAD:
            raise ContainerError("container shorter than its fixed overhead")
        magic, midx, w, h, model_id, glen, llen = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise ContainerError(f"bad container magic {magic!r}")
        if midx >= len(MODES):
            raise ContainerError(f"unknown mode index {midx}")
        if len(data) != OVERHEAD + glen + llen:
            raise ContainerError("container length does not match its header")
        (crc,) = _TRAILER.unpack_from(data, len(data) - _TRAILER.size)
        if zlib.crc32(data[: -_TRAILER.size]) != crc:
            raise ContainerError("container checksum mismatch")
        g0 = _HEADER.size
        return cls(MODES[midx], w, h, model_id, data[g0 : g0 + glen], data[g0 + glen : g0 + glen + llen])
