"""Quaternion scalars and dense quaternion matrices.

A quaternion matrix ``Q = Q_w + Q_x i + Q_y j + Q_z k`` is stored as a single
``(4, m, n)`` float64 array whose leading axis indexes the real planes
``w, x, y, z``.  Each plane is a contiguous row-major ``m x n`` block, so the
complex representations in :mod:`qlra.complex_bridge` are assembled from
plane views without per-entry shuffling.

Matrix products are evaluated as one real GEMM against the 4x4 block
multiplication table of the right operand (16 plane products in total).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

__all__ = [
    "Quaternion",
    "QMatrix",
    "qmat_mul",
    "qmat_adjoint",
    "qmat_fro_norm",
]


@dataclass(frozen=True)
class Quaternion:
    """Quaternion scalar ``w + x i + y j + z k``."""

    w: float = 0.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __mul__(self, other):
        if not isinstance(other, Quaternion):
            if not isinstance(other, (int, float, np.floating, np.integer)):
                return NotImplemented
            other = Quaternion(float(other))
        a, b = self, other
        return Quaternion(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )

    def __rmul__(self, other):
        return Quaternion(float(other)) * self

    def __add__(self, other):
        if not isinstance(other, Quaternion):
            other = Quaternion(float(other))
        return Quaternion(self.w + other.w, self.x + other.x, self.y + other.y, self.z + other.z)

    __radd__ = __add__

    def __neg__(self):
        return Quaternion(-self.w, -self.x, -self.y, -self.z)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def conj(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def norm(self) -> float:
        return float(np.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2))

    def inverse(self) -> "Quaternion":
        n2 = self.w**2 + self.x**2 + self.y**2 + self.z**2
        if n2 == 0:
            raise ZeroDivisionError("zero quaternion has no inverse")
        c = self.conj()
        return Quaternion(c.w / n2, c.x / n2, c.y / n2, c.z / n2)

    def to_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    def isclose(self, other, atol=1e-12) -> bool:
        return bool(np.allclose(self.to_array(), Quaternion._coerce(other).to_array(), rtol=0, atol=atol))

    @staticmethod
    def _coerce(value) -> "Quaternion":
        return value if isinstance(value, Quaternion) else Quaternion(float(value))


I = Quaternion(0.0, 1.0, 0.0, 0.0)
J = Quaternion(0.0, 0.0, 1.0, 0.0)
K = Quaternion(0.0, 0.0, 0.0, 1.0)


class QMatrix:
    """Immutable dense quaternion matrix stored as four real planes."""

    __slots__ = ("_data",)

    def __init__(self, data):
        data = np.array(data, dtype=np.float64, order="C", copy=True)
        if data.ndim != 3 or data.shape[0] != 4:
            raise ShapeError(f"expected planes of shape (4, m, n), got {data.shape}")
        data.flags.writeable = False
        self._data = data

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "QMatrix":
        # internal constructor: takes ownership, no copy when already contiguous
        obj = cls.__new__(cls)
        data = np.ascontiguousarray(data, dtype=np.float64)
        if data.ndim != 3 or data.shape[0] != 4:
            raise ShapeError(f"expected planes of shape (4, m, n), got {data.shape}")
        data.flags.writeable = False
        obj._data = data
        return obj

    # -- construction -----------------------------------------------------
    @classmethod
    def from_planes(cls, w, x=None, y=None, z=None) -> "QMatrix":
        w = np.atleast_2d(np.asarray(w, dtype=np.float64))
        zero = np.zeros_like(w)
        planes = [w] + [zero if p is None else np.atleast_2d(np.asarray(p, dtype=np.float64)) for p in (x, y, z)]
        shapes = {p.shape for p in planes}
        if len(shapes) != 1:
            raise ShapeError(f"plane shapes differ: {sorted(shapes)}")
        return cls._wrap(np.stack(planes))

    @classmethod
    def from_real(cls, a) -> "QMatrix":
        return cls.from_planes(a)

    @classmethod
    def from_complex_pair(cls, q0, q1) -> "QMatrix":
        """Build ``Q0 + Q1 j`` with ``Q0 = Q_w + Q_x i`` and ``Q1 = Q_y + Q_z i``."""
        q0 = np.atleast_2d(np.asarray(q0, dtype=np.complex128))
        q1 = np.atleast_2d(np.asarray(q1, dtype=np.complex128))
        if q0.shape != q1.shape:
            raise ShapeError(f"complex parts differ in shape: {q0.shape} vs {q1.shape}")
        return cls._wrap(np.stack([q0.real, q0.imag, q1.real, q1.imag]))

    @classmethod
    def zeros(cls, m: int, n: int) -> "QMatrix":
        return cls._wrap(np.zeros((4, m, n)))

    @classmethod
    def eye(cls, m: int, n: int | None = None) -> "QMatrix":
        n = m if n is None else n
        data = np.zeros((4, m, n))
        data[0] = np.eye(m, n)
        return cls._wrap(data)

    @classmethod
    def from_scalars(cls, rows) -> "QMatrix":
        """Build from a nested list of :class:`Quaternion` (or real) entries."""
        rows = [[Quaternion._coerce(q) for q in row] for row in rows]
        m, n = len(rows), len(rows[0])
        data = np.zeros((4, m, n))
        for i, row in enumerate(rows):
            if len(row) != n:
                raise ShapeError("ragged rows")
            for j, q in enumerate(row):
                data[:, i, j] = q.to_array()
        return cls._wrap(data)

    # -- views ------------------------------------------------------------
    @property
    def data(self) -> np.ndarray:
        """Read-only ``(4, m, n)`` plane array."""
        return self._data

    @property
    def shape(self):
        return self._data.shape[1:]

    @property
    def rows(self) -> int:
        return self._data.shape[1]

    @property
    def cols(self) -> int:
        return self._data.shape[2]

    @property
    def w(self):
        return self._data[0]

    @property
    def x(self):
        return self._data[1]

    @property
    def y(self):
        return self._data[2]

    @property
    def z(self):
        return self._data[3]

    def complex_pair(self):
        """Return ``(Q0, Q1)`` with ``Q = Q0 + Q1 j``."""
        d = self._data
        return d[0] + 1j * d[1], d[2] + 1j * d[3]

    def entry(self, i: int, j: int) -> Quaternion:
        return Quaternion(*(float(v) for v in self._data[:, i, j]))

    def __getitem__(self, key) -> "QMatrix":
        if not isinstance(key, tuple):
            key = (key, slice(None))
        rows, cols = key
        if isinstance(rows, (int, np.integer)):
            rows = slice(rows, rows + 1) if rows != -1 else slice(-1, None)
        if isinstance(cols, (int, np.integer)):
            cols = slice(cols, cols + 1) if cols != -1 else slice(-1, None)
        sub = self._data[:, rows, :][:, :, cols]
        return QMatrix._wrap(sub.copy())

    def __repr__(self):
        return f"QMatrix({self.rows}x{self.cols})"

    # -- arithmetic -------------------------------------------------------
    def __matmul__(self, other) -> "QMatrix":
        return qmat_mul(self, other)

    def __add__(self, other) -> "QMatrix":
        _same_shape(self, other)
        return QMatrix._wrap(self._data + other._data)

    def __sub__(self, other) -> "QMatrix":
        _same_shape(self, other)
        return QMatrix._wrap(self._data - other._data)

    def __neg__(self) -> "QMatrix":
        return QMatrix._wrap(-self._data)

    def __mul__(self, c) -> "QMatrix":
        if isinstance(c, Quaternion):
            return self @ _scalar_diag(c, self.cols)
        return QMatrix._wrap(self._data * float(c))

    def __rmul__(self, c) -> "QMatrix":
        if isinstance(c, Quaternion):
            return _scalar_diag(c, self.rows) @ self
        return QMatrix._wrap(self._data * float(c))

    def __truediv__(self, c) -> "QMatrix":
        return QMatrix._wrap(self._data / float(c))

    def scale_columns(self, d) -> "QMatrix":
        """Right-multiply by the real diagonal matrix ``diag(d)``."""
        d = np.asarray(d, dtype=np.float64)
        if d.shape != (self.cols,):
            raise ShapeError(f"need {self.cols} column scales, got {d.shape}")
        return QMatrix._wrap(self._data * d[None, None, :])

    def conj(self) -> "QMatrix":
        return QMatrix._wrap(self._data * _CONJ_SIGNS)

    def adjoint(self) -> "QMatrix":
        return qmat_adjoint(self)

    @property
    def H(self) -> "QMatrix":
        return qmat_adjoint(self)

    def fro_norm(self) -> float:
        return qmat_fro_norm(self)

    def allclose(self, other, rtol=1e-12, atol=1e-12) -> bool:
        return self.shape == other.shape and bool(np.allclose(self._data, other._data, rtol=rtol, atol=atol))

    def array_equal(self, other) -> bool:
        return self.shape == other.shape and bool(np.array_equal(self._data, other._data))

    def __eq__(self, other):
        if not isinstance(other, QMatrix):
            return NotImplemented
        return self.array_equal(other)

    __hash__ = None

    # -- assembly ---------------------------------------------------------
    @staticmethod
    def hstack(blocks) -> "QMatrix":
        return QMatrix._wrap(np.concatenate([b._data for b in blocks], axis=2))

    @staticmethod
    def vstack(blocks) -> "QMatrix":
        return QMatrix._wrap(np.concatenate([b._data for b in blocks], axis=1))


_CONJ_SIGNS = np.array([1.0, -1.0, -1.0, -1.0])[:, None, None]


def _same_shape(a: QMatrix, b: QMatrix):
    if not isinstance(b, QMatrix):
        raise TypeError(f"expected QMatrix, got {type(b).__name__}")
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def _scalar_diag(q: Quaternion, n: int) -> QMatrix:
    data = np.zeros((4, n, n))
    for k, v in enumerate(q.to_array()):
        data[k] = v * np.eye(n)
    return QMatrix._wrap(data)


def _right_table(b: np.ndarray) -> np.ndarray:
    """Real ``4n x 4p`` block matrix ``T`` with ``[A_w A_x A_y A_z] T = [C_w C_x C_y C_z]``."""
    bw, bx, by, bz = b
    return np.block(
        [
            [bw, bx, by, bz],
            [-bx, bw, -bz, by],
            [-by, bz, bw, -bx],
            [-bz, -by, bx, bw],
        ]
    )


def qmat_mul(A: QMatrix, B: QMatrix) -> QMatrix:
    """Quaternion matrix product ``A @ B``."""
    if not isinstance(A, QMatrix) or not isinstance(B, QMatrix):
        raise TypeError("qmat_mul expects QMatrix operands")
    m, n = A.shape
    n2, p = B.shape
    if n != n2:
        raise ShapeError(f"inner dimensions differ: {A.shape} @ {B.shape}")
    if m == 0 or p == 0 or n == 0:
        return QMatrix.zeros(m, p)
    left = np.concatenate(A._data, axis=1)  # m x 4n
    prod = left @ _right_table(B._data)  # m x 4p
    return QMatrix._wrap(prod.reshape(m, 4, p).transpose(1, 0, 2))


def qmat_adjoint(A: QMatrix) -> QMatrix:
    """Conjugate transpose ``Q* = Q_w^T - Q_x^T i - Q_y^T j - Q_z^T k``."""
    return QMatrix._wrap((A._data * _CONJ_SIGNS).transpose(0, 2, 1))


def qmat_fro_norm(A: QMatrix) -> float:
    """Frobenius norm, the root of the summed squared plane norms."""
    return float(np.sqrt(np.sum(A._data * A._data)))
