"""Matrix files (AMAT v1 binary or headerless CSV) and benchmark CSV output.

AMAT v1 layout: ``b"AMAT"``, version byte 1, three zero bytes, u64 rows,
u64 cols (little-endian), then rows*cols little-endian float64, row-major.
"""

from __future__ import annotations

import csv
import os
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .tensor import DenseMatrix

MAGIC = b"AMAT"
VERSION = 1
_HEADER = struct.Struct("<4sB3sQQ")


def write_matrix(path, m) -> None:
    m = np.ascontiguousarray(m, dtype="<f8")
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise FormatError(f"only 2-D matrices can be written, got shape {m.shape}")
    rows, cols = m.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, b"\0\0\0", rows, cols))
        fh.write(m.tobytes(order="C"))


def _read_amat(raw: bytes, path) -> DenseMatrix:
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, pad, rows, cols = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported AMAT version {version}")
    if pad != b"\0\0\0":
        raise FormatError(f"{path}: nonzero header padding")
    if rows < 1 or cols < 1:
        raise FormatError(f"{path}: empty matrix {rows}x{cols}")
    expected = _HEADER.size + 8 * rows * cols
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {rows}x{cols}, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size, count=rows * cols)
    return data.astype(np.float64).reshape(rows, cols)


def _read_csv_matrix(raw: bytes, path) -> DenseMatrix:
    try:
        text = raw.decode("ascii")
        rows = [[float(tok) for tok in line.split(",")]
                for line in text.splitlines() if line.strip()]
    except (UnicodeDecodeError, ValueError) as exc:
        raise FormatError(f"{path}: not an AMAT file and not numeric CSV ({exc})") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise FormatError(f"{path}: CSV rows are empty or ragged")
    return np.array(rows, dtype=np.float64)


def read_matrix(path) -> DenseMatrix:
    """Read an AMAT v1 file, or a headerless numeric CSV when the magic is absent."""
    raw = Path(path).read_bytes()
    if not raw:
        raise FormatError(f"{path}: empty file")
    if raw[:4] == MAGIC:
        m = _read_amat(raw, path)
    elif len(raw) < 4 and MAGIC.startswith(raw):
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    else:
        m = _read_csv_matrix(raw, path)
    if not np.isfinite(m).all():
        raise FormatError(f"{path}: non-finite entries")
    return m


BENCH_FIELDS = (
    "sweep_value", "trial", "l2_sparse", "linf_sparse", "l2_noalpha", "linf_noalpha",
    "time_exact_us", "time_sparse_us", "bound_linf",
)


def format_real(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def write_csv(path, rows, fields=BENCH_FIELDS) -> None:
    """Write dict rows in order with a header; reals use 17 significant digits."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([format_real(row[f]) for f in fields])
    os.replace(tmp, path)


def read_csv(path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]
