"""Binary model snapshots (little-endian).

Layout, in order::

    magic "FTLWM\\x00\\x00\\x00", version u32
    encoder   input_dim u32, num_tiles u32, grid_dim u32, bins u32, seed u64
    dims      D u64, S u64, lambda_inv f64, count u64
    W         D*S f64, row-major
    active    ceil(D/8) bytes, little bit order
    A         nnz u64, rows i64[nnz], cols i64[nnz], values f64[nnz]
    B         D*S f64, row-major

``A`` triples are sorted by (row, col).  The projection matrix is not
stored; it is regenerated from the encoder seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SnapshotError
from .features import EncoderConfig
from .world_model import SufficientStats, WorldModel

__all__ = ["Snapshot", "save_snapshot", "load_snapshot", "dumps", "loads", "MAGIC", "VERSION"]

MAGIC = b"FTLWM\x00\x00\x00"
VERSION = 1


@dataclass
class Snapshot:
    encoder: EncoderConfig
    model: WorldModel
    stats: SufficientStats


def dumps(encoder: EncoderConfig, model: WorldModel, stats: SufficientStats) -> bytes:
    D, S = model.dim, model.out_dim
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        struct.pack("<IIIIQ", encoder.input_dim, encoder.num_tiles, encoder.grid_dim, encoder.bins, encoder.seed),
        struct.pack("<QQdQ", D, S, model.lambda_inv, stats.count),
        np.ascontiguousarray(model.W, dtype="<f8").tobytes(),
        np.packbits(model.active.astype(np.uint8), bitorder="little").tobytes(),
    ]
    rows, cols, vals = stats.triples()
    parts += [
        struct.pack("<Q", rows.size),
        rows.astype("<i8").tobytes(),
        cols.astype("<i8").tobytes(),
        vals.astype("<f8").tobytes(),
        np.ascontiguousarray(stats.B, dtype="<f8").tobytes(),
    ]
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int, section: str) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise SnapshotError(section, f"truncated (need {n} bytes at offset {self.pos}, have {len(self.data) - self.pos})")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, section: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), section))

    def array(self, dtype: str, count: int, section: str) -> np.ndarray:
        size = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(count * size, section), dtype=dtype).astype(dtype[1:], copy=True)


def loads(data: bytes) -> Snapshot:
    r = _Reader(data)
    if r.take(len(MAGIC), "header") != MAGIC:
        raise SnapshotError("header", "bad magic")
    (version,) = r.unpack("<I", "header")
    if version != VERSION:
        raise SnapshotError("header", f"unsupported version {version}")
    input_dim, num_tiles, grid_dim, bins, seed = r.unpack("<IIIIQ", "encoder")
    enc = EncoderConfig(input_dim=input_dim, num_tiles=num_tiles, grid_dim=grid_dim, bins=bins, seed=seed)
    try:
        enc.validate()
    except ValueError as exc:
        raise SnapshotError("encoder", str(exc)) from exc
    D, S, lambda_inv, count = r.unpack("<QQdQ", "dims")
    if D != enc.dim:
        raise SnapshotError("dims", f"D={D} disagrees with the encoder (D={enc.dim})")
    W = r.array("<f8", D * S, "W").reshape(D, S)
    packed = np.frombuffer(r.take((D + 7) // 8, "active"), dtype=np.uint8)
    active = np.unpackbits(packed, bitorder="little")[:D].astype(bool)
    (nnz,) = r.unpack("<Q", "A")
    rows = r.array("<i8", nnz, "A")
    cols = r.array("<i8", nnz, "A")
    vals = r.array("<f8", nnz, "A")
    if nnz and (rows.min() < 0 or cols.min() < 0 or rows.max() >= D or cols.max() >= D):
        raise SnapshotError("A", "index out of range")
    B = r.array("<f8", D * S, "B").reshape(D, S)
    if r.pos != len(data):
        raise SnapshotError("trailer", f"{len(data) - r.pos} unexpected trailing bytes")
    model = WorldModel(int(D), int(S), float(lambda_inv), W, active)
    stats = SufficientStats.from_parts(int(D), int(S), rows, cols, vals, B, int(count))
    return Snapshot(enc, model, stats)


def save_snapshot(path: str | Path, encoder: EncoderConfig, model: WorldModel, stats: SufficientStats) -> None:
    Path(path).write_bytes(dumps(encoder, model, stats))


def load_snapshot(path: str | Path) -> Snapshot:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise SnapshotError("file", str(exc)) from exc
    return loads(data)
