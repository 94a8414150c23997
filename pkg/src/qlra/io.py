"""Binary quaternion matrix format ``QMAT1``.

Layout: the six magic bytes ``QMAT1\\0``, the row and column counts as
little-endian ``u64``, then the planes ``w, x, y, z`` in that order, each
row-major little-endian ``f64``.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import FormatError
from .quaternion import QMatrix

__all__ = ["QMAT_MAGIC", "qmat_to_bytes", "qmat_from_bytes", "write_qmat", "read_qmat", "read_qmat_record"]

QMAT_MAGIC = b"QMAT1\0"
_DIMS = struct.Struct("<QQ")
_LE_F64 = np.dtype("<f8")


def qmat_to_bytes(A: QMatrix) -> bytes:
    m, n = A.shape
    return QMAT_MAGIC + _DIMS.pack(m, n) + A.data.astype(_LE_F64, copy=False).tobytes(order="C")


def read_qmat_record(buf, offset: int = 0):
    """Parse one QMAT1 record starting at ``offset``; return ``(matrix, end_offset)``."""
    buf = memoryview(buf)
    head = offset + len(QMAT_MAGIC)
    if bytes(buf[offset:head]) != QMAT_MAGIC:
        raise FormatError("missing QMAT1 magic")
    if len(buf) < head + _DIMS.size:
        raise FormatError("truncated QMAT1 header")
    m, n = _DIMS.unpack_from(buf, head)
    start = head + _DIMS.size
    nbytes = 4 * m * n * _LE_F64.itemsize
    if len(buf) - start < nbytes:
        raise FormatError(f"truncated QMAT1 payload: need {nbytes} bytes, have {len(buf) - start}")
    data = np.frombuffer(buf, dtype=_LE_F64, count=4 * m * n, offset=start).reshape(4, m, n)
    return QMatrix(data.astype(np.float64)), start + nbytes


def qmat_from_bytes(raw: bytes) -> QMatrix:
    A, end = read_qmat_record(raw)
    if end != len(raw):
        raise FormatError(f"{len(raw) - end} unexpected trailing bytes after QMAT1 payload")
    return A


def write_qmat(path, A: QMatrix) -> None:
    with open(os.fspath(path), "wb") as fh:
        fh.write(qmat_to_bytes(A))


def read_qmat(path) -> QMatrix:
    with open(os.fspath(path), "rb") as fh:
        return qmat_from_bytes(fh.read())
