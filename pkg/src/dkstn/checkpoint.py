"""Binary container for named float64 arrays (checkpoints, fitted statistics).

Layout, all integers little-endian:

    magic "DKW1"
    u32 entry count
    per entry:
        u32 name byte length, UTF-8 name
        u32 rank, then rank x u32 extents
        raw float64 little-endian payload (product of extents values)

Scalars are stored as rank-0 entries with a single payload value.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError, LengthError

MAGIC = b"DKW1"


def save_arrays(path, entries: dict[str, np.ndarray]) -> None:
    """Write named arrays in insertion order."""
    chunks = [MAGIC, struct.pack("<I", len(entries))]
    for name, value in entries.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_arrays(path) -> dict[str, np.ndarray]:
    """Read back a container written by save_arrays, preserving order."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r} in {path}, expected {MAGIC!r}")
    offset = 4

    def take(count, what):
        nonlocal offset
        if offset + count > len(blob):
            raise LengthError(
                f"truncated container {path}: expected {offset + count} bytes "
                f"for {what}, file has {len(blob)}"
            )
        piece = blob[offset:offset + count]
        offset += count
        return piece

    (n_entries,) = struct.unpack("<I", take(4, "entry count"))
    entries: dict[str, np.ndarray] = {}
    for _ in range(n_entries):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        extents = struct.unpack(f"<{rank}I", take(4 * rank, "extents"))
        count = int(np.prod(extents)) if rank else 1
        payload = take(8 * count, f"payload of '{name}'")
        arr = np.frombuffer(payload, dtype="<f8").astype(np.float64)
        entries[name] = arr.reshape(extents)
    if offset != len(blob):
        raise LengthError(
            f"container {path} has {len(blob) - offset} trailing bytes "
            f"after {n_entries} entries"
        )
    return entries
