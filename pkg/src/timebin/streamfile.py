"""Binary timestamp stream files.

Layout (little endian), 27-byte header followed by the payload:

    bytes 0..3    magic "PTS1"
    bytes 4..5    u16 format version, currently 1
    byte  6       u8  channel id (0 signal, 1 idler)
    bytes 7..10   u32 slot period in picoseconds
    bytes 11..18  u64 timestamp count
    bytes 19..26  u64 originating seed
    payload       count * u64 timestamps, picoseconds, non-decreasing

Timestamps above 2^63 - 1 are rejected on both ends so files always round
trip through signed 64-bit analysis arrays.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterator

import numpy as np

from .coincidence import TimestampStream
from .errors import StreamFormatError

MAGIC = b"PTS1"
VERSION = 1
_HEADER = struct.Struct("<4sHBIQQ")
HEADER_SIZE = _HEADER.size
_I63_MAX = (1 << 63) - 1


def write_stream(path: str | Path, stream: TimestampStream) -> None:
    """Serialize a stream. The in-memory invariants (sorted, non-negative,
    below 2^63) are re-checked so a corrupt array never reaches disk."""
    t = stream.times_ps
    if t.size:
        if int(t[0]) < 0:
            raise StreamFormatError("negative timestamp cannot be encoded")
        if np.any(np.diff(t) < 0):
            raise StreamFormatError("timestamps must be non-decreasing")
    if not 0 <= stream.channel <= 0xFF:
        raise StreamFormatError("channel id must fit in one byte")
    if not 1 <= stream.slot_period_ps <= 0xFFFFFFFF:
        raise StreamFormatError("slot period must fit in u32 picoseconds")
    header = _HEADER.pack(MAGIC, VERSION, stream.channel, stream.slot_period_ps,
                          t.size, stream.seed & 0xFFFFFFFFFFFFFFFF)
    with open(path, "wb") as f:
        f.write(header)
        f.write(t.astype("<u8").tobytes())


def _read_header(f) -> tuple[int, int, int, int]:
    raw = f.read(HEADER_SIZE)
    if len(raw) < HEADER_SIZE:
        raise StreamFormatError(f"truncated header: {len(raw)} of {HEADER_SIZE} bytes")
    magic, version, channel, period, count, seed = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise StreamFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise StreamFormatError(f"unsupported format version {version}")
    if period < 1:
        raise StreamFormatError("slot period in header must be >= 1 ps")
    return channel, period, count, seed


def _check_chunk(arr: np.ndarray, base_index: int, prev_last: int | None) -> int:
    """Validate one payload chunk; returns the chunk's last value."""
    too_big = arr > _I63_MAX
    if np.any(too_big):
        k = int(np.argmax(too_big))
        raise StreamFormatError(
            f"timestamp at index {base_index + k} exceeds 2^63 - 1")
    if prev_last is not None and arr.size and int(arr[0]) < prev_last:
        raise StreamFormatError(
            f"timestamp at index {base_index} breaks monotonic order")
    if arr.size > 1:
        bad = np.flatnonzero(np.diff(arr.astype(np.int64)) < 0)
        if bad.size:
            raise StreamFormatError(
                f"timestamp at index {base_index + int(bad[0]) + 1} breaks monotonic order")
    return int(arr[-1]) if arr.size else (prev_last or 0)


def read_stream(path: str | Path) -> TimestampStream:
    """Read and fully validate one stream file."""
    with open(path, "rb") as f:
        channel, period, count, seed = _read_header(f)
        payload = f.read(count * 8 + 1)
    if len(payload) < count * 8:
        raise StreamFormatError(
            f"truncated payload: {len(payload)} of {count * 8} bytes")
    if len(payload) > count * 8:
        raise StreamFormatError("trailing bytes after payload")
    arr = np.frombuffer(payload, dtype="<u8")
    _check_chunk(arr, 0, None)
    return TimestampStream(times_ps=arr.astype(np.int64), channel=channel,
                           slot_period_ps=period, seed=seed)


def iter_stream(path: str | Path, chunk_events: int = 1 << 20) -> Iterator[np.ndarray]:
    """Yield a stream file's timestamps in bounded int64 chunks.

    Validation matches read_stream but memory stays at one chunk, so
    arbitrarily large files can be scanned on a small machine.
    """
    if chunk_events < 1:
        raise ValueError("chunk_events must be >= 1")
    with open(path, "rb") as f:
        _, _, count, _ = _read_header(f)
        remaining = count
        base = 0
        prev_last: int | None = None
        while remaining:
            n = min(chunk_events, remaining)
            raw = f.read(n * 8)
            if len(raw) < n * 8:
                raise StreamFormatError(
                    f"truncated payload: ended {remaining * 8 - len(raw)} bytes early")
            arr = np.frombuffer(raw, dtype="<u8")
            prev_last = _check_chunk(arr, base, prev_last)
            base += n
            remaining -= n
            yield arr.astype(np.int64)
        if f.read(1):
            raise StreamFormatError("trailing bytes after payload")
