"""Binary field containers, mask files, manifests and CSV reports.

AGRF record, version 1 (one core-grid field)::

    b"AGRF" | u16 version=1 | u32 n_core | u64 seed | n_core**2 x f64   (little-endian)

Version 2 carries an arbitrary array (observation vectors, covariance dumps)::

    b"AGRF" | u16 version=2 | u32 n_core | u64 seed | u32 rank | rank x u32 shape | prod(shape) x f64

Files may hold any number of concatenated records.  AMSK mask files::

    b"AMSK" | u16 version=1 | u32 n_core | u32 count | count x u32 index
"""
from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FIELD_MAGIC = b"AGRF"
MASK_MAGIC = b"AMSK"
_HEAD = struct.Struct("<4sHIQ")
_MASK_HEAD = struct.Struct("<4sHII")


class FormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Record:
    values: np.ndarray
    n_core: int
    seed: int
    version: int


def encode_field(values, n_core: int, seed: int) -> bytes:
    v = np.ascontiguousarray(values, dtype="<f8").ravel()
    if v.size != n_core * n_core:
        raise ValueError(f"expected {n_core * n_core} values, got {v.size}")
    return _HEAD.pack(FIELD_MAGIC, 1, n_core, int(seed)) + v.tobytes()


def encode_array(arr, seed: int = 0, n_core: int = 0) -> bytes:
    a = np.ascontiguousarray(arr, dtype="<f8")
    shape = struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape)
    return _HEAD.pack(FIELD_MAGIC, 2, n_core, int(seed)) + shape + a.tobytes()


def decode_records(buf: bytes) -> list[Record]:
    out, pos = [], 0
    while pos < len(buf):
        if len(buf) - pos < _HEAD.size:
            raise FormatError(f"truncated header at byte {pos}")
        magic, version, n_core, seed = _HEAD.unpack_from(buf, pos)
        if magic != FIELD_MAGIC:
            raise FormatError(f"bad magic {magic!r} at byte {pos}")
        pos += _HEAD.size
        if version == 1:
            shape = (n_core * n_core,)
        elif version == 2:
            (rank,) = struct.unpack_from("<I", buf, pos)
            shape = struct.unpack_from(f"<{rank}I", buf, pos + 4)
            pos += 4 + 4 * rank
        else:
            raise FormatError(f"unsupported AGRF version {version}")
        count = int(np.prod(shape, dtype=np.int64))
        end = pos + 8 * count
        if end > len(buf):
            raise FormatError(f"truncated payload at byte {pos}")
        vals = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(shape).astype(float)
        out.append(Record(vals, n_core, seed, version))
        pos = end
    return out


def write_fields(path, values, n_core: int, seeds, append: bool = False) -> None:
    """Write rows of ``values`` as consecutive version-1 records."""
    values = np.atleast_2d(values)
    seeds = np.broadcast_to(np.asarray(seeds, dtype=np.uint64), (values.shape[0],))
    with open(path, "ab" if append else "wb") as fh:
        for v, s in zip(values, seeds):
            fh.write(encode_field(v, n_core, int(s)))


def write_array(path, arr, seed: int = 0, n_core: int = 0) -> None:
    Path(path).write_bytes(encode_array(arr, seed, n_core))


def read_records(path) -> list[Record]:
    try:
        return decode_records(Path(path).read_bytes())
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def read_fields(path):
    """Stack all version-1 records: returns ``(values (k, n_core**2), n_core, seeds)``."""
    recs = [r for r in read_records(path) if r.version == 1]
    if not recs:
        return np.empty((0, 0)), 0, np.empty(0, dtype=np.uint64)
    n_core = recs[0].n_core
    if any(r.n_core != n_core for r in recs):
        raise FormatError(f"{path}: mixed grid sizes")
    return np.stack([r.values for r in recs]), n_core, np.array([r.seed for r in recs], dtype=np.uint64)


def read_array(path) -> np.ndarray:
    return read_records(path)[0].values


def write_mask(path, rows, n_core: int) -> None:
    rows = np.asarray(rows, dtype="<u4")
    with open(path, "wb") as fh:
        fh.write(_MASK_HEAD.pack(MASK_MAGIC, 1, n_core, rows.size))
        fh.write(rows.tobytes())


def read_mask(path):
    """Returns ``(rows, n_core)``."""
    buf = Path(path).read_bytes()
    if len(buf) < _MASK_HEAD.size:
        raise FormatError(f"{path}: truncated mask header")
    magic, version, n_core, count = _MASK_HEAD.unpack_from(buf)
    if magic != MASK_MAGIC or version != 1:
        raise FormatError(f"{path}: not an AMSK v1 file")
    if len(buf) != _MASK_HEAD.size + 4 * count:
        raise FormatError(f"{path}: expected {count} indices")
    rows = np.frombuffer(buf, dtype="<u4", offset=_MASK_HEAD.size).astype(np.int64)
    return rows, n_core


class Manifest:
    """Append-only ``key = value`` log ending with a ``complete`` line."""

    COMPLETE = "complete"

    def __init__(self, path):
        self.path = Path(path)

    def append(self, key: str, value) -> None:
        with open(self.path, "a") as fh:
            fh.write(f"{key} = {value}\n")
            fh.flush()
            os.fsync(fh.fileno())

    def complete(self) -> None:
        with open(self.path, "a") as fh:
            fh.write(self.COMPLETE + "\n")


def read_manifest(path):
    """Returns ``(entries, complete)``; repeated keys keep their last value."""
    entries, done = {}, False
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line == Manifest.COMPLETE:
            done = True
        elif "=" in line:
            k, v = line.split("=", 1)
            entries[k.strip()] = v.strip()
    return entries, done


def write_csv(path, schema: str, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {schema}\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def read_csv(path):
    """Returns ``(schema, header, rows)`` with rows as lists of strings."""
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# schema:"):
            raise FormatError(f"{path}: missing schema line")
        reader = csv.reader(fh)
        header = next(reader)
        return first.split(":", 1)[1].strip(), header, list(reader)
