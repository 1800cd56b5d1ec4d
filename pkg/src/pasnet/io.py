"""File formats: raw IMU windows, dataset manifests, and the named-tensor container.

Raw window binary: 16-byte header ``<magic, T, C_in, V>`` (uint32 little-endian)
followed by ``T*C_in*V`` float32 LE values in ``[T, C_in, V]`` row-major order.

Raw window CSV: one row per time step with ``C_in*V`` values, node-major
(all channels of node 0, then node 1, ...). An optional non-numeric header row
is skipped.

Tensor container: ``b"PASNETTC"``, uint32 version, uint32 JSON-metadata length,
metadata, uint32 tensor count, then per tensor: uint32 name length, UTF-8 name,
uint32 ndim, ndim x uint32 dims, float32 LE data (row-major).
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InputError

WINDOW_MAGIC = 0x57554D49  # b"IMUW" read as little-endian uint32
CONTAINER_MAGIC = b"PASNETTC"
CONTAINER_VERSION = 1
MANIFEST_HEADER = "# pasnet-manifest v1"
MANIFEST_COLUMNS = ("path", "label", "subject_id", "split")


@dataclass
class RawWindow:
    data: np.ndarray  # [T, C_in, V]
    label: Optional[int] = None
    sample_rate: Optional[float] = None

    def __post_init__(self):
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise InputError(f"raw window must be [T, C_in, V], got shape {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise InputError("raw window contains non-finite values")


def write_window_bin(path, data: np.ndarray) -> None:
    data = np.asarray(data, dtype="<f4")
    T, C, V = data.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4I", WINDOW_MAGIC, T, C, V))
        fh.write(np.ascontiguousarray(data).tobytes())


def read_window_bin(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise InputError(f"{path}: truncated window header")
    magic, T, C, V = struct.unpack("<4I", raw[:16])
    if magic != WINDOW_MAGIC:
        raise InputError(f"{path}: bad magic {magic:#x}")
    n = T * C * V
    if len(raw) != 16 + 4 * n:
        raise InputError(f"{path}: expected {n} float32 values after header")
    data = np.frombuffer(raw, dtype="<f4", offset=16).reshape(T, C, V).astype(np.float32)
    if not np.isfinite(data).all():
        raise InputError(f"{path}: non-finite values")
    return data


def write_window_csv(path, data: np.ndarray) -> None:
    data = np.asarray(data)
    T, C, V = data.shape
    rows = data.transpose(0, 2, 1).reshape(T, V * C)
    np.savetxt(path, rows, delimiter=",", fmt="%.9g")


def read_window_csv(path, in_channels: int, nodes: int) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows:
        try:
            float(rows[0][0])
        except ValueError:
            rows = rows[1:]
    try:
        arr = np.array([[float(v) for v in r] for r in rows], dtype=np.float32)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] != in_channels * nodes:
        raise InputError(f"{path}: expected rows of {in_channels * nodes} values")
    if not np.isfinite(arr).all():
        raise InputError(f"{path}: non-finite values")
    return arr.reshape(-1, nodes, in_channels).transpose(0, 2, 1).copy()


def read_window(path, in_channels: int, nodes: int) -> np.ndarray:
    if str(path).lower().endswith(".csv"):
        return read_window_csv(path, in_channels, nodes)
    return read_window_bin(path)


def write_manifest(path, entries) -> None:
    """``entries``: iterable of ``(path, label, subject_id, split)``."""
    with open(path, "w", newline="") as fh:
        fh.write(MANIFEST_HEADER + "\n")
        w = csv.writer(fh)
        w.writerow(MANIFEST_COLUMNS)
        for e in entries:
            w.writerow(e)


def read_manifest(path) -> list[dict]:
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != MANIFEST_HEADER:
            raise InputError(f"{path}: missing manifest header {MANIFEST_HEADER!r}")
        rows = list(csv.DictReader(fh))
    for r in rows:
        if set(MANIFEST_COLUMNS) - set(r):
            raise InputError(f"{path}: manifest needs columns {MANIFEST_COLUMNS}")
        r["label"] = int(r["label"])
    return rows


def write_tensor_container(path, tensors: dict, meta: Optional[dict] = None) -> None:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CONTAINER_MAGIC)
        fh.write(struct.pack("<II", CONTAINER_VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(np.asarray(arr, dtype="<f4"))
            nb = name.encode()
            fh.write(struct.pack("<I", len(nb)) + nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def read_tensor_container(path) -> tuple[dict, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != CONTAINER_MAGIC:
        raise InputError(f"{path}: not a tensor container")
    pos = 8

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, raw, pos)
        pos += struct.calcsize(fmt)
        return vals

    try:
        version, mlen = take("<II")
        if version != CONTAINER_VERSION:
            raise InputError(f"{path}: unsupported container version {version}")
        meta = json.loads(raw[pos:pos + mlen].decode())
        pos += mlen
        (count,) = take("<I")
        tensors = {}
        for _ in range(count):
            (nlen,) = take("<I")
            name = raw[pos:pos + nlen].decode()
            pos += nlen
            (ndim,) = take("<I")
            shape = take(f"<{ndim}I") if ndim else ()
            n = int(np.prod(shape)) if ndim else 1
            tensors[name] = np.frombuffer(raw, dtype="<f4", count=n, offset=pos).reshape(shape).copy()
            pos += 4 * n
    except struct.error:
        raise InputError(f"{path}: truncated container") from None
    return tensors, meta
