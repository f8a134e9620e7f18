"""Append-only binary journal shared by the queue and the scheduler.

Record framing, little-endian:

    [u32 length] [u8 kind] [payload: length bytes] [u32 crc32]

The CRC covers the kind byte and the payload. A reader stops at the first
record that is short, overlong or fails its CRC; the byte offset of that
record is reported so the writer can truncate the tail.
"""

from __future__ import annotations

import os
import struct
import zlib
from typing import Iterator, Optional

HEADER = struct.Struct("<IB")
TRAILER = struct.Struct("<I")

KIND_ENQUEUED = 1
KIND_DELIVERED = 2
KIND_ACKED = 3
KIND_ALLOCATION = 4
KIND_EFFECT = 5


class JournalWriter:
    """Appends framed records. Each append is flushed (and fsynced unless
    disabled) before returning, so a record is durable once append() returns."""

    def __init__(self, path: str, fsync: bool = True):
        self.path = path
        self.fsync = fsync
        self._fh = open(path, "ab")
        # test hook: when set, raises after the Nth successful append to
        # model a crash that interrupts the operation mid-flight
        self._fail_after: Optional[int] = None
        self._appends = 0

    def append(self, kind: int, payload: bytes) -> None:
        crc = zlib.crc32(bytes([kind]) + payload) & 0xFFFFFFFF
        self._fh.write(HEADER.pack(len(payload), kind) + payload + TRAILER.pack(crc))
        self._fh.flush()
        if self.fsync:
            os.fsync(self._fh.fileno())
        self._appends += 1
        if self._fail_after is not None and self._appends >= self._fail_after:
            self._fail_after = None
            raise SimulatedCrash(f"injected crash after {self._appends} appends")

    def truncate_to(self, offset: int) -> None:
        self._fh.flush()
        self._fh.truncate(offset)

    def close(self) -> None:
        self._fh.close()


class SimulatedCrash(Exception):
    """Raised by the fail-after test hook; never raised in real operation."""


def read_records(path: str) -> tuple[list[tuple[int, bytes]], Optional[int]]:
    """Read every valid record. Returns (records, corrupt_offset); the offset
    is None when the file is clean and otherwise marks where replay stopped."""
    records: list[tuple[int, bytes]] = []
    if not os.path.exists(path):
        return records, None
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0
    n = len(data)
    while pos < n:
        if pos + HEADER.size > n:
            return records, pos
        length, kind = HEADER.unpack_from(data, pos)
        end = pos + HEADER.size + length + TRAILER.size
        if end > n:
            return records, pos
        payload = data[pos + HEADER.size : pos + HEADER.size + length]
        (crc,) = TRAILER.unpack_from(data, end - TRAILER.size)
        if crc != (zlib.crc32(bytes([kind]) + payload) & 0xFFFFFFFF):
            return records, pos
        records.append((kind, payload))
        pos = end
    return records, None
