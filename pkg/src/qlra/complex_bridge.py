"""Complex representations of quaternion matrices and a complex-arithmetic solver.

Writing ``Q = Q0 + Q1 j`` with ``Q0 = Q_w + Q_x i`` and ``Q1 = Q_y + Q_z i``,

* the compact representation is the ``2m x n`` matrix ``Q_c = [Q0; -conj(Q1)]``;
* the full representation is ``chi_Q = [[Q0, Q1], [-conj(Q1), conj(Q0)]]``,
  which equals ``[Q_c, J conj(Q_c)]`` with ``J = [[0, -I], [I, 0]]``.

``chi`` is a ring homomorphism, so quaternion products, adjoints and
pseudoinverses can all be evaluated with complex kernels.  ``J`` is never
formed; it is applied as a block swap with a sign flip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .errors import ShapeError, SingularMatrixError
from .quaternion import QMatrix

__all__ = [
    "SymplecticContext",
    "to_compact",
    "to_full",
    "from_compact",
    "from_full",
    "j_mul_conj",
    "solve_quaternion_linear",
    "QuaternionLU",
    "RCOND_TOL",
]

# Reciprocal condition estimates below this reject the system as singular.
RCOND_TOL = 1e-14


@dataclass(frozen=True)
class SymplecticContext:
    """Implicit ``J = [[0, -I_m], [I_m, 0]]`` of block size ``m``."""

    m: int

    def apply(self, U: np.ndarray) -> np.ndarray:
        """Return ``J U``."""
        U = _check_even(U, 2 * self.m)
        top, bot = U[: self.m], U[self.m :]
        return np.concatenate([-bot, top], axis=0)

    def apply_adjoint(self, U: np.ndarray) -> np.ndarray:
        """Return ``J* U = -J U``."""
        return -self.apply(U)

    def apply_conj(self, U: np.ndarray) -> np.ndarray:
        """Return ``J conj(U)``."""
        return self.apply(np.conj(U))


def _check_even(U, rows=None) -> np.ndarray:
    U = np.asarray(U)
    if U.ndim == 1:
        U = U[:, None]
    if U.shape[0] % 2:
        raise ShapeError(f"row count must be even, got {U.shape[0]}")
    if rows is not None and U.shape[0] != rows:
        raise ShapeError(f"expected {rows} rows, got {U.shape[0]}")
    return U


def to_compact(A: QMatrix) -> np.ndarray:
    """``A_c = [A0; -conj(A1)]`` as a ``2m x n`` complex array."""
    d = A.data
    out = np.empty((2 * A.rows, A.cols), dtype=np.complex128)
    m = A.rows
    out[:m].real = d[0]
    out[:m].imag = d[1]
    out[m:].real = -d[2]
    out[m:].imag = d[3]
    return out


def to_full(A: QMatrix) -> np.ndarray:
    """``chi_A = [[A0, A1], [-conj(A1), conj(A0)]]`` as a ``2m x 2n`` complex array."""
    d = A.data
    m, n = A.shape
    out = np.empty((2 * m, 2 * n), dtype=np.complex128)
    out[:m, :n].real = d[0]
    out[:m, :n].imag = d[1]
    out[:m, n:].real = d[2]
    out[:m, n:].imag = d[3]
    out[m:, :n].real = -d[2]
    out[m:, :n].imag = d[3]
    out[m:, n:].real = d[0]
    out[m:, n:].imag = -d[1]
    return out


def from_compact(Z) -> QMatrix:
    """Inverse of :func:`to_compact`: ``X = Z0 - conj(Z1) j`` for ``Z = [Z0; Z1]``."""
    Z = _check_even(np.asarray(Z, dtype=np.complex128))
    m = Z.shape[0] // 2
    top, bot = Z[:m], Z[m:]
    return QMatrix._wrap(np.stack([top.real, top.imag, -bot.real, bot.imag]))


def from_full(M) -> QMatrix:
    """Quaternion matrix whose full representation has first block column ``M[:, :n]``."""
    M = _check_even(np.asarray(M, dtype=np.complex128))
    if M.shape[1] % 2:
        raise ShapeError(f"column count must be even, got {M.shape[1]}")
    return from_compact(M[:, : M.shape[1] // 2])


def j_mul_conj(U) -> np.ndarray:
    """``J conj(U)``: top block becomes ``-conj(bottom)``, bottom becomes ``conj(top)``."""
    U = _check_even(np.asarray(U, dtype=np.complex128))
    m = U.shape[0] // 2
    return np.concatenate([-np.conj(U[m:]), np.conj(U[:m])], axis=0)


class QuaternionLU:
    """LU factorization of ``chi_A`` for a square quaternion ``A``, reusable across solves."""

    def __init__(self, A: QMatrix, rcond_tol: float = RCOND_TOL):
        if A.rows != A.cols:
            raise ShapeError(f"LU needs a square matrix, got {A.shape}")
        M = to_full(A)
        self.n = A.rows
        lu, piv, info = lapack.zgetrf(M)
        if info > 0:
            raise SingularMatrixError("complex representation is exactly singular", np.inf)
        rcond, _ = lapack.zgecon(lu, np.linalg.norm(M, 1), norm="1")
        self.condition_estimate = np.inf if rcond == 0 else 1.0 / rcond
        if not rcond >= rcond_tol:
            raise SingularMatrixError(
                f"complex representation is numerically singular (cond ~ {self.condition_estimate:.3e})",
                self.condition_estimate,
            )
        self._lu, self._piv = lu, piv

    def solve_complex(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``chi_A Z = rhs`` for a complex right-hand side."""
        x, _ = lapack.zgetrs(self._lu, self._piv, np.asarray(rhs, dtype=np.complex128))
        return x

    def solve(self, B: QMatrix, symmetrize: bool = False) -> QMatrix:
        if B.rows != self.n:
            raise ShapeError(f"right-hand side has {B.rows} rows, expected {self.n}")
        Bc = to_compact(B)
        if not symmetrize:
            return from_compact(self.solve_complex(Bc))
        k = Bc.shape[1]
        Z = self.solve_complex(np.concatenate([Bc, j_mul_conj(Bc)], axis=1))
        return from_compact(_symmetrized(Z[:, :k], Z[:, k:]))


def _symmetrized(Z, Zj):
    # Z solves chi_A Z = B_c and Zj solves chi_A Zj = J conj(B_c).  Averaging Z
    # with -J conj(Zj) is the same as replacing the backward error of the
    # complex solver by its chi-structured part, so the computed quaternion
    # solution inherits the exact algebraic relations of the true one.
    return 0.5 * (Z - j_mul_conj(Zj))


def _least_squares(M, rhs, rcond_tol):
    q, r = sla.qr(M, mode="economic")
    rcond, _ = lapack.ztrcon(r, norm="1", uplo="U", diag="N")
    if not rcond >= rcond_tol:
        cond = np.inf if rcond == 0 else 1.0 / rcond
        raise SingularMatrixError(f"complex representation is numerically rank deficient (cond ~ {cond:.3e})", cond)
    return sla.solve_triangular(r, q.conj().T @ rhs, lower=False)


def solve_quaternion_linear(
    A: QMatrix, B: QMatrix, *, symmetrize: bool = False, rcond_tol: float = RCOND_TOL
) -> QMatrix:
    """Solve ``A X = B`` through the complex system ``chi_A Z = B_c``.

    Square systems use an LU factorization with partial pivoting.  Tall
    systems are solved in the least-squares sense with a thin QR, so for
    inconsistent right-hand sides ``X`` minimizes ``||A X - B||_F``.  Raises
    :class:`SingularMatrixError` when the reciprocal condition estimate of
    ``chi_A`` falls below ``rcond_tol`` (default :data:`RCOND_TOL`).

    With ``symmetrize`` the system is also solved for ``J conj(B_c)`` and the
    two solutions are averaged, which keeps the result exactly consistent
    with the quaternion structure at twice the solve cost.
    """
    n1, n2 = A.shape
    if B.rows != n1:
        raise ShapeError(f"row counts differ: A is {A.shape}, B is {B.shape}")
    if n1 < n2:
        raise ShapeError(f"underdetermined system {A.shape} is not supported")
    if B.cols == 0 or n2 == 0:
        return QMatrix.zeros(n2, B.cols)
    if n1 == n2:
        return QuaternionLU(A, rcond_tol).solve(B, symmetrize=symmetrize)
    Bc = to_compact(B)
    if not symmetrize:
        return from_compact(_least_squares(to_full(A), Bc, rcond_tol))
    k = Bc.shape[1]
    Z = _least_squares(to_full(A), np.concatenate([Bc, j_mul_conj(Bc)], axis=1), rcond_tol)
    return from_compact(_symmetrized(Z[:, :k], Z[:, k:]))
