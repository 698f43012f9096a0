"""Time-series file formats.

CSV: a header row naming the columns (ROIs), one row per time point.

Binary cache (``.elts``), little-endian::

    magic      4 bytes   b"ELTS"
    version    1 byte    CACHE_VERSION
    T, N       2 x uint64
    names_len  uint64    length of the UTF-8 JSON list of column names
    names      names_len bytes
    data       T*N float64, column-major (one contiguous block per column)
"""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .core import as_timeseries

CACHE_MAGIC = b"ELTS"
CACHE_VERSION = 1


def read_timeseries_csv(path) -> tuple[np.ndarray, list[str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = [row for row in reader if row]
    try:
        data = np.array([[float(v) for v in row] for row in rows], dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric entry ({exc})") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValueError(f"{path}: rows do not match the {len(header)}-column header")
    return as_timeseries(data), header


def write_timeseries_csv(path, X, names=None) -> None:
    X = np.asarray(X, dtype=float)
    if names is None:
        names = [f"x{i}" for i in range(X.shape[1])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for row in X:
            writer.writerow([repr(float(v)) for v in row])


def write_cache(path, X, names=None) -> None:
    X = np.asarray(X, dtype="<f8")
    T, N = X.shape
    if names is None:
        names = [f"x{i}" for i in range(N)]
    blob = json.dumps(list(names)).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<B", CACHE_VERSION))
        fh.write(struct.pack("<QQQ", T, N, len(blob)))
        fh.write(blob)
        fh.write(np.asfortranarray(X).tobytes(order="F"))


def read_cache(path) -> tuple[np.ndarray, list[str]]:
    raw = Path(path).read_bytes()
    if raw[:4] != CACHE_MAGIC:
        raise ValueError(f"{path}: not a time-series cache (bad magic)")
    (version,) = struct.unpack_from("<B", raw, 4)
    if version != CACHE_VERSION:
        raise ValueError(f"{path}: unsupported cache version {version}")
    T, N, nlen = struct.unpack_from("<QQQ", raw, 5)
    off = 5 + 24
    names = json.loads(raw[off:off + nlen].decode("utf-8"))
    off += nlen
    data = np.frombuffer(raw, dtype="<f8", count=T * N, offset=off)
    return data.reshape((T, N), order="F").astype(float), names


def read_timeseries(path) -> tuple[np.ndarray, list[str]]:
    """Dispatch on content: binary cache if the magic matches, CSV otherwise."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == CACHE_MAGIC:
        return read_cache(path)
    return read_timeseries_csv(path)
