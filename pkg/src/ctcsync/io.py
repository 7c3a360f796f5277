"""Trajectory serialization.

CSV layout: header ``t,mx_0,my_0,mz_0,mx_1,...``, one row per sample.

Binary layout (all little-endian):

    offset 0   4 bytes   magic b"CTCT"
    offset 4   uint32    format version (1)
    offset 8   uint64    n, number of CTCs
    offset 16  uint64    T, number of samples
    offset 24  float64[T]          time grid
               float64[T] * 3n     columns mx_0, my_0, mz_0, mx_1, ...
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .meanfield import TrajectoryRecord

__all__ = ["write_trajectory_csv", "read_trajectory_csv", "write_trajectory_bin",
           "read_trajectory_bin", "write_trajectory", "read_trajectory"]

MAGIC = b"CTCT"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


def _columns(n: int) -> list[str]:
    return [f"m{c}_{a}" for a in range(n) for c in "xyz"]


def write_trajectory_csv(record: TrajectoryRecord, path) -> Path:
    path = Path(path)
    data = np.column_stack([record.t, record.states.reshape(record.t.size, -1)])
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + _columns(record.n))
        for row in data:
            w.writerow([repr(float(x)) for x in row])
    return path


def read_trajectory_csv(path) -> TrajectoryRecord:
    path = Path(path)
    with path.open(newline="") as fh:
        header = next(csv.reader(fh))
    ncol = len(header) - 1
    if header[0] != "t" or ncol % 3 or header[1:] != _columns(ncol // 3):
        raise ValueError(f"{path}: not a trajectory CSV")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return TrajectoryRecord(data[:, 0], data[:, 1:].reshape(len(data), -1, 3))


def write_trajectory_bin(record: TrajectoryRecord, path) -> Path:
    path = Path(path)
    n, size = record.n, record.t.size
    cols = record.states.reshape(size, 3 * n).T
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, size))
        fh.write(np.ascontiguousarray(record.t, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(cols, dtype="<f8").tobytes())
    return path


def read_trajectory_bin(path) -> TrajectoryRecord:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, n, size = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 8 * size * (1 + 3 * n)
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    t = body[:size].copy()
    states = body[size:].reshape(3 * n, size).T.reshape(size, n, 3).copy()
    return TrajectoryRecord(t, states)


def write_trajectory(record: TrajectoryRecord, path) -> Path:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return write_trajectory_csv(record, path)
    return write_trajectory_bin(record, path)


def read_trajectory(path) -> TrajectoryRecord:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_trajectory_csv(path)
    return read_trajectory_bin(path)
