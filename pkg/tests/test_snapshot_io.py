import struct

import numpy as np
import pytest

from shelab.grid import Field, make_grid
from shelab.snapshot_io import (MAGIC, SnapshotError, decode_snapshot, encode_snapshot,
                                read_snapshot, snapshot_csv, write_snapshot)


def test_roundtrip_bit_exact(tmp_path):
    g = make_grid(2, 3.0, 16)
    f = Field(g, np.random.default_rng(0).standard_normal(g.shape))
    path = tmp_path / "s.bin"
    write_snapshot(path, f, 0.125)
    t, h = read_snapshot(path)
    assert t == 0.125 and h.grid == g
    np.testing.assert_array_equal(h.values, f.values)


def test_layout():
    g = make_grid(1, 1.0, 8)
    blob = encode_snapshot(Field(g, np.arange(8.0)), 2.5)
    assert blob[:8] == MAGIC
    assert struct.unpack_from("<IIIdd", blob, 8) == (1, 1, 8, 1.0, 2.5)
    assert len(blob) == 8 + 12 + 16 + 64
    assert np.frombuffer(blob[-64:], "<f8")[3] == 3.0


def test_corrupt_inputs():
    g = make_grid(1, 1.0, 8)
    blob = encode_snapshot(Field.constant(g, 1.0), 0.0)
    with pytest.raises(SnapshotError):
        decode_snapshot(blob[:10])
    with pytest.raises(SnapshotError):
        decode_snapshot(b"X" + blob[1:])
    with pytest.raises(SnapshotError):
        decode_snapshot(blob[:-8])


def test_csv():
    g = make_grid(1, 1.0, 8)
    text = snapshot_csv(Field(g, np.arange(8.0)), 0.5)
    lines = text.splitlines()
    assert lines[0] == "# t=0.5" and lines[1] == "x,value" and lines[3] == "0.125,1.0"
    with pytest.raises(SnapshotError):
        snapshot_csv(Field.constant(make_grid(2, 1.0, 8)), 0.0)
