"""Columnar CSV and bit-packed configuration files for chain traces.

Binary configuration files start with a 16-byte little-endian header::

    magic   4s   b"SDMH" (linear model) or b"SDDM" (Dirichlet-Multinomial)
    version u16  1
    J       u16  categories per row (1 for linear-model traces)
    P       u32  predictors
    T       u32  iterations

followed by ``T + 1`` rows (the initial state, then one row per iteration),
each holding the ``P * J`` inclusion bits in row-major order packed with
:func:`numpy.packbits`.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

__all__ = ["MAGIC", "MAGIC_DM", "VERSION", "write_columns", "read_columns", "write_configs", "read_configs"]

MAGIC = b"SDMH"
MAGIC_DM = b"SDDM"
VERSION = 1
_HEADER = struct.Struct("<4sHHII")


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(int(x))


def write_columns(path, columns: dict) -> None:
    """Write equal-length columns as CSV (comma, header row, LF endings)."""
    names = list(columns)
    cols = [np.asarray(columns[k]) for k in names]
    n = len(cols[0]) if cols else 0
    if any(len(c) != n for c in cols):
        raise ValueError("columns differ in length")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        lists = [c.tolist() for c in cols]
        for row in zip(*lists):
            w.writerow([_fmt(v) for v in row])


def read_columns(path) -> dict[str, np.ndarray]:
    """Read a CSV written by :func:`write_columns`; integer-looking columns stay integer."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    names, body = rows[0], rows[1:]
    out = {}
    for j, name in enumerate(names):
        vals = [r[j] for r in body]
        try:
            out[name] = np.array([int(v) for v in vals], dtype=np.int64)
        except ValueError:
            out[name] = np.array([float(v) for v in vals], dtype=float)
    return out


def write_configs(path, configs: np.ndarray, P: int, J: int = 1, magic: bytes = MAGIC) -> None:
    """``configs``: (T + 1, P * J) array of 0/1 (initial state first)."""
    configs = np.asarray(configs, dtype=np.uint8)
    if configs.ndim != 2 or configs.shape[1] != P * J:
        raise ValueError("configs must have shape (T + 1, P * J)")
    T = configs.shape[0] - 1
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, VERSION, J, P, T))
        fh.write(np.packbits(configs, axis=1).tobytes())


def read_configs(path) -> tuple[np.ndarray, int, int]:
    """Return ``(configs, P, J)`` with ``configs`` of shape (T + 1, P * J)."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, J, P, T = _HEADER.unpack_from(data)
    if magic not in (MAGIC, MAGIC_DM) or version != VERSION:
        raise ValueError(f"{path}: not a configuration file (magic={magic!r}, version={version})")
    width = (P * J + 7) // 8
    body = np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size)
    if body.size != (T + 1) * width:
        raise ValueError(f"{path}: expected {(T + 1) * width} payload bytes, found {body.size}")
    bits = np.unpackbits(body.reshape(T + 1, width), axis=1, count=P * J)
    return bits, P, J
