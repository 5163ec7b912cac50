"""Binary field snapshots.

Layout (little-endian throughout), documented byte-exactly in
docs/formats.md:

    bytes  0..7   magic b"KSFIELD1"
    bytes  8..11  uint32 dim (1..3)
    bytes 12..23  3 x uint32 per-axis cell counts (unused axes zero)
    bytes 24..31  float64 snapshot time
    bytes 32..    prod(counts) float64 cell values, C order (lexicographic)
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .grid import Field, Grid

MAGIC = b"KSFIELD1"
HEADER_BYTES = 32


class SnapshotFormatError(ValueError):
    pass


def write_snapshot(path, f: Field, t: float) -> None:
    g = f.grid
    counts = list(g.cells) + [0] * (3 - g.dim)
    header = MAGIC + np.array([g.dim] + counts, dtype="<u4").tobytes() \
        + np.array([t], dtype="<f8").tobytes()
    assert len(header) == HEADER_BYTES
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_snapshot(path) -> tuple[np.ndarray, int, tuple[int, ...], float]:
    """Returns (values, dim, counts, time); validates header and payload size."""
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_BYTES or raw[:8] != MAGIC:
        raise SnapshotFormatError(f"{path}: not a field snapshot")
    meta = np.frombuffer(raw[8:24], dtype="<u4")
    dim = int(meta[0])
    if dim not in (1, 2, 3):
        raise SnapshotFormatError(f"{path}: bad dim {dim}")
    counts = tuple(int(c) for c in meta[1:1 + dim])
    if any(c < 4 for c in counts):
        raise SnapshotFormatError(f"{path}: bad counts {counts}")
    t = float(np.frombuffer(raw[24:32], dtype="<f8")[0])
    n = math.prod(counts)
    payload = raw[HEADER_BYTES:]
    if len(payload) != 8 * n:
        raise SnapshotFormatError(
            f"{path}: payload holds {len(payload) // 8} values, expected {n}")
    vals = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(counts)
    return vals, dim, counts, t


def read_field(path, g: Grid) -> tuple[Field, float]:
    """Read a snapshot and bind it to a grid (counts must match)."""
    vals, dim, counts, t = read_snapshot(path)
    if dim != g.dim or counts != g.cells:
        raise SnapshotFormatError(
            f"{path}: snapshot is {dim}D {counts}, grid is {g.dim}D {g.cells}")
    return Field(g, vals), t
