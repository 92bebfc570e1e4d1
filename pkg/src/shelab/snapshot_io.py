"""Field snapshots on disk.

Binary layout (little-endian, no padding): 8-byte magic b"SHEFIELD",
uint32 version, uint32 q, uint32 N, float64 L, float64 t, then N^q
float64 values in row-major order.
"""

from __future__ import annotations

import struct

import numpy as np

from .grid import Field, make_grid

MAGIC = b"SHEFIELD"
VERSION = 1
_HEADER = struct.Struct("<8sIIIdd")


class SnapshotError(ValueError):
    """Malformed snapshot file."""


def encode_snapshot(field: Field, t: float) -> bytes:
    g = field.grid
    head = _HEADER.pack(MAGIC, VERSION, g.q, g.N, g.L, float(t))
    return head + np.ascontiguousarray(field.values, dtype="<f8").tobytes(order="C")


def decode_snapshot(blob: bytes):
    """Return (t, Field) from encoded bytes."""
    if len(blob) < _HEADER.size:
        raise SnapshotError("snapshot shorter than its header")
    magic, version, q, N, L, t = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise SnapshotError("bad magic")
    if version != VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    grid = make_grid(q, L, N)
    payload = blob[_HEADER.size:]
    if len(payload) != 8 * grid.size:
        raise SnapshotError(f"payload has {len(payload)} bytes, expected {8 * grid.size}")
    vals = np.frombuffer(payload, dtype="<f8").reshape(grid.shape)
    return t, Field(grid, vals)


def write_snapshot(path, field: Field, t: float) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_snapshot(field, t))


def read_snapshot(path):
    with open(path, "rb") as fh:
        return decode_snapshot(fh.read())


def snapshot_csv(field: Field, t: float) -> str:
    """Two-column CSV (x, value) for 1-D fields."""
    if field.grid.q != 1:
        raise SnapshotError("CSV export is for q = 1 only")
    lines = [f"# t={t!r}", "x,value"]
    lines += [f"{x!r},{v!r}" for x, v in zip(field.grid.axis.tolist(), field.values.tolist())]
    return "\n".join(lines) + "\n"
