"""Complex QR/SVD primitives and the quaternion SVD built on them.

The quaternion SVD is read off the complex SVD of the full representation
``chi_A``, whose singular values come in duplicate pairs ``(u, J conj u)``.
Each cleanly separated pair contributes one quaternion singular triple.
Everything else (clusters, pairs that sit too close to a neighbour, values
at the noise floor) is collected into *bad groups*.  A bad group spans a
``J``-invariant subspace, from which :func:`pair_basis` extracts an
orthonormal quaternion basis by pivoted Gram-Schmidt.  The small core
``P* A K`` of a bad group is then diagonalized on its own scale, either by
recursion or, for a tight cluster, by a polar factor followed by a shifted
Hermitian eigenproblem.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Protocol

import numpy as np
import scipy.linalg as sla

from .complex_bridge import from_compact, from_full, j_mul_conj, to_full
from .errors import ShapeError
from .quaternion import QMatrix

__all__ = [
    "ComplexBackend",
    "LapackBackend",
    "get_backend",
    "set_backend",
    "use_backend",
    "ComplexQr",
    "QsvdFactors",
    "PairGroup",
    "PairPartition",
    "complex_qr",
    "complex_svd",
    "classify_pairs",
    "pair_basis",
    "qsvd",
    "qmat_pinv",
    "spectral_norm",
    "condition_number",
    "singular_values",
    "orthonormal_basis",
    "orthonormal_complement",
    "PAIR_TOL",
    "SEP_TOL",
    "FLOOR_TOL",
]

# Two consecutive chi singular values form one quaternion pair when they differ
# by at most PAIR_TOL * s_1.
PAIR_TOL = 1e-8
# A pair must also sit at least SEP_TOL * s_1 away from its neighbours.  The
# structure error of a computed pair is about eps * s_1 / gap, so this keeps
# quaternion orthonormality near 1e-11.
SEP_TOL = 1e-5
# Values below FLOOR_TOL * s_1 are treated as numerically zero.
FLOOR_TOL = 1e-13

_MAX_DEPTH = 6


# ---------------------------------------------------------------------------
# backend
# ---------------------------------------------------------------------------


class ComplexBackend(Protocol):
    """Dense complex kernels used by every factorization in the package.

    ``qr(M)`` returns a thin ``(Q, R)``; ``svd(M)`` returns a thin
    ``(U, s, Vh)`` with ``s`` nonincreasing.
    """

    def qr(self, M: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...

    def svd(self, M: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]: ...


class LapackBackend:
    """Householder QR (``geqrf``) and Golub-Kahan SVD.

    The default driver ``gesvd`` finishes the bidiagonal SVD with implicit
    shifted QR sweeps.  ``driver="gesdd"`` switches to divide and conquer,
    which is several times faster on large matrices.
    """

    def __init__(self, driver: str = "gesvd"):
        if driver not in ("gesvd", "gesdd"):
            raise ValueError(f"unknown LAPACK SVD driver {driver!r}")
        self.driver = driver

    def qr(self, M):
        return sla.qr(M, mode="economic", check_finite=False)

    def svd(self, M):
        return sla.svd(M, full_matrices=False, lapack_driver=self.driver, check_finite=False)


_backend: ComplexBackend = LapackBackend()


def get_backend() -> ComplexBackend:
    return _backend


def set_backend(backend: ComplexBackend) -> ComplexBackend:
    """Install ``backend`` globally and return the previous one."""
    global _backend
    old, _backend = _backend, backend
    return old


@contextlib.contextmanager
def use_backend(backend: ComplexBackend):
    old = set_backend(backend)
    try:
        yield backend
    finally:
        set_backend(old)


# ---------------------------------------------------------------------------
# complex primitives
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComplexQr:
    Q: np.ndarray
    R: np.ndarray


def complex_qr(M) -> ComplexQr:
    """Thin QR whose ``R`` has a real nonnegative diagonal."""
    M = np.asarray(M, dtype=np.complex128)
    p, q = M.shape
    if p < q:
        raise ShapeError(f"complex_qr needs rows >= cols, got {M.shape}")
    Q, R = _backend.qr(M)
    d = np.diagonal(R).copy()
    mag = np.abs(d)
    phase = np.ones_like(d)
    nz = mag > 0
    phase[nz] = d[nz] / mag[nz]
    Q = Q * phase[None, :]
    R = np.conj(phase)[:, None] * R
    R[np.arange(q), np.arange(q)] = np.abs(np.diagonal(R))
    return ComplexQr(Q, R)


def complex_svd(M):
    """Compact SVD ``M = U diag(s) V*`` returned as ``(U, s, V)``.

    Tall inputs are first reduced by a QR factorization so that the columns
    of ``U`` stay inside ``range(M)`` to working precision, also when ``M``
    is badly conditioned.
    """
    M = np.asarray(M, dtype=np.complex128)
    p, q = M.shape
    if p < q:
        V, s, U = complex_svd(M.conj().T)
        return U, s, V
    if p == 0 or q == 0:
        return np.zeros((p, 0), complex), np.zeros(0), np.zeros((q, 0), complex)
    if p > q:
        Q, R = _backend.qr(M)
        Ur, s, Vh = _backend.svd(R)
        U = Q @ Ur
    else:
        U, s, Vh = _backend.svd(M)
    return U, s, Vh.conj().T


# ---------------------------------------------------------------------------
# pair bookkeeping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PairGroup:
    """Contiguous run of sorted values that does not form a clean pair."""

    indices: np.ndarray
    tiny: bool

    @property
    def t(self) -> int:
        return len(self.indices) // 2


@dataclass(frozen=True)
class PairPartition:
    good: np.ndarray  # first index of each good pair
    bad: tuple  # PairGroup entries

    @property
    def bad_count(self) -> int:
        return sum(g.t for g in self.bad)


def classify_pairs(values, scale=None, pair_tol=PAIR_TOL, sep_tol=SEP_TOL, floor=None) -> PairPartition:
    """Split nonincreasing ``values`` of even length into good pairs and bad groups.

    Values are first cut into clusters wherever consecutive entries differ by
    more than ``sep_tol * scale``; odd clusters are merged with their
    successor.  A cluster of exactly two values closer than
    ``pair_tol * scale`` and above ``floor`` (absolute; ``None`` disables it)
    is a good pair.  Every other cluster is a bad group, flagged ``tiny``
    when all of its values are at or below the floor.
    """
    s = np.asarray(values, dtype=np.float64)
    N = len(s)
    if N % 2:
        raise ShapeError(f"expected an even number of values, got {N}")
    if scale is None:
        scale = float(np.max(np.abs(s))) if N else 0.0
    lo = -np.inf if floor is None else floor
    good, bad = [], []
    start = 0
    for i in range(1, N + 1):
        if i < N and s[i - 1] - s[i] <= sep_tol * scale:
            continue
        if (i - start) % 2 and i < N:
            continue  # odd cluster: extend into the next one
        if i - start == 2 and s[start] - s[start + 1] <= pair_tol * scale and s[start + 1] > lo:
            good.append(start)
        else:
            bad.append(PairGroup(np.arange(start, i), tiny=bool(s[start] <= lo)))
        start = i
    return PairPartition(np.array(good, dtype=int), tuple(bad))


def pair_basis(C, t: int | None = None) -> np.ndarray:
    """Compact columns ``u_1..u_t`` with ``{u_k, J conj u_k}`` orthonormal, drawn from ``span(C)``.

    Pivoted modified Gram-Schmidt with one reorthogonalization pass: at each
    step the candidate with the largest residual is normalized and both it
    and its ``J``-partner are projected out of the remaining candidates.
    When ``span(C)`` is ``J conj``-invariant of dimension ``2t`` the result
    spans it.
    """
    C = np.array(C, dtype=np.complex128, copy=True)
    rows, c = C.shape
    if t is None:
        t = c // 2
    basis = np.zeros((rows, 2 * t), dtype=np.complex128)
    for k in range(t):
        norms = np.linalg.norm(C, axis=0)
        p = int(np.argmax(norms))
        if norms[p] <= 0:
            u = _fresh_direction(basis[:, : 2 * k], rows, k)
        else:
            u = C[:, p] / norms[p]
        B = basis[:, : 2 * k]
        for _ in range(2):
            u = u - B @ (B.conj().T @ u)
            u = u / np.linalg.norm(u)
        v = j_mul_conj(u[:, None])[:, 0]
        basis[:, 2 * k] = u
        basis[:, 2 * k + 1] = v
        pair = basis[:, 2 * k : 2 * k + 2]
        C -= pair @ (pair.conj().T @ C)
    return basis[:, 0::2].copy()


def _fresh_direction(B, rows, k):
    # deterministic fallback when candidates are exhausted: first unit vector
    # with a large residual against the current basis
    eye = np.eye(rows, dtype=np.complex128)
    res = eye - B @ (B.conj().T @ eye)
    p = int(np.argmax(np.linalg.norm(res, axis=0)))
    return res[:, p] / np.linalg.norm(res[:, p])


# ---------------------------------------------------------------------------
# quaternion SVD
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QsvdFactors:
    """Compact quaternion SVD ``A = U diag(sigma) V*``."""

    U: QMatrix
    sigma: np.ndarray
    V: QMatrix

    def reconstruct(self) -> QMatrix:
        return self.U.scale_columns(self.sigma) @ self.V.H

    def truncate(self, r: int) -> "QsvdFactors":
        return QsvdFactors(self.U[:, :r], self.sigma[:r].copy(), self.V[:, :r])


def _right_mul_columns(data: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Multiply column ``j`` of a ``(4, m, k)`` plane array on the right by quaternion ``q[:, j]``."""
    aw, ax, ay, az = data
    bw, bx, by, bz = (c[None, :] for c in q)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def _normalize_phases(U: QMatrix, V: QMatrix):
    """Rotate each singular pair so the largest entry of the ``U`` column is real positive."""
    u = U.data
    k = U.cols
    if k == 0 or U.rows == 0:
        return U, V
    mag = np.sum(u * u, axis=0)
    p = np.argmax(mag, axis=0)
    lead = u[:, p, np.arange(k)]
    norm = np.sqrt(np.sum(lead * lead, axis=0))
    q = np.zeros((4, k))
    q[0] = 1.0
    nz = norm > 0
    q[:, nz] = lead[:, nz] / norm[nz]
    q[1:, :] *= -1.0  # conjugate
    return QMatrix._wrap(_right_mul_columns(u, q)), QMatrix._wrap(_right_mul_columns(V.data, q))


def _eye_cols(n, k):
    return QMatrix.eye(n, k)


def qsvd(A: QMatrix, *, _depth: int = 0, _floor: float | None = None) -> QsvdFactors:
    """Compact quaternion SVD with ``min(m, n)`` singular triples, sorted nonincreasing."""
    m, n = A.shape
    k = min(m, n)
    if k == 0:
        return QsvdFactors(QMatrix.zeros(m, 0), np.zeros(0), QMatrix.zeros(n, 0))
    U, s, V = complex_svd(to_full(A))
    s1 = float(s[0])
    if s1 == 0.0:
        return QsvdFactors(_eye_cols(m, k), np.zeros(k), _eye_cols(n, k))
    floor = FLOOR_TOL * s1 if _floor is None else _floor
    part = classify_pairs(s, scale=s1, floor=floor)

    u_blocks, v_blocks, sig = [], [], []
    if len(part.good):
        u_blocks.append(from_compact(U[:, part.good]))
        v_blocks.append(from_compact(V[:, part.good]))
        sig.append(s[part.good])
    for g in part.bad:
        P = from_compact(pair_basis(U[:, g.indices], g.t))
        K = from_compact(pair_basis(V[:, g.indices], g.t))
        if g.tiny:
            u_blocks.append(P)
            v_blocks.append(K)
            sig.append(np.zeros(g.t))
            continue
        B = P.H @ (A @ K)
        vals = s[g.indices]
        if vals.min() >= 0.5 * vals.max() or _depth >= _MAX_DEPTH:
            Ub, sb, Vb = _cluster_svd(B, _depth)
        else:
            f = qsvd(B, _depth=_depth + 1, _floor=floor)
            Ub, sb, Vb = f.U, f.sigma, f.V
        u_blocks.append(P @ Ub)
        v_blocks.append(K @ Vb)
        sig.append(sb)

    sigma = np.concatenate(sig)
    order = np.argsort(-sigma, kind="stable")
    Uq = QMatrix.hstack(u_blocks)
    Vq = QMatrix.hstack(v_blocks)
    Uq = QMatrix._wrap(Uq.data[:, :, order])
    Vq = QMatrix._wrap(Vq.data[:, :, order])
    Uq, Vq = _normalize_phases(Uq, Vq)
    return QsvdFactors(Uq, sigma[order], Vq)


def _cluster_svd(B: QMatrix, depth: int):
    """SVD of a square core whose singular values lie in one narrow band.

    ``B = W H`` with ``W`` the unitary polar factor and ``H`` Hermitian
    positive semidefinite; ``H`` is diagonalized after shifting by its mean
    eigenvalue so that the eigenvector structure is resolved on the scale of
    the band rather than of ``B``.
    """
    t = B.rows
    Uc, sc, Vc = complex_svd(to_full(B))
    W = from_full(Uc @ Vc.conj().T)
    Hm = W.H @ B
    Hm = (Hm + Hm.H) * 0.5
    mu = float(np.trace(Hm.w)) / t
    lam, Q = _qeigh(Hm - mu * QMatrix.eye(t), depth)
    lam = np.maximum(lam + mu, 0.0)
    return W @ Q, lam, Q


def _qeigh(Hm: QMatrix, depth: int = 0):
    """Eigen-decomposition ``Hm = Q diag(lam) Q*`` of a quaternion Hermitian matrix."""
    t = Hm.rows
    chi = to_full(Hm)
    chi = (chi + chi.conj().T) * 0.5
    w, Z = np.linalg.eigh(chi)
    order = np.argsort(-w, kind="stable")
    w, Z = w[order], Z[:, order]
    scale = float(np.max(np.abs(w)))
    if scale == 0.0:
        return np.zeros(t), QMatrix.eye(t)
    part = classify_pairs(w, scale=scale)
    q_blocks, lam = [], []
    if len(part.good):
        q_blocks.append(from_compact(Z[:, part.good]))
        lam.append(w[part.good])
    for g in part.bad:
        P = from_compact(pair_basis(Z[:, g.indices], g.t))
        vals = w[g.indices]
        if vals.max() - vals.min() <= PAIR_TOL * scale or depth >= _MAX_DEPTH:
            q_blocks.append(P)
            lam.append(np.full(g.t, vals.mean()))
            continue
        sub = P.H @ Hm @ P
        sub = (sub + sub.H) * 0.5
        mu = float(np.trace(sub.w)) / g.t
        ls, Qs = _qeigh(sub - mu * QMatrix.eye(g.t), depth + 1)
        q_blocks.append(P @ Qs)
        lam.append(ls + mu)
    lam = np.concatenate(lam)
    order = np.argsort(-lam, kind="stable")
    Q = QMatrix.hstack(q_blocks)
    return lam[order], QMatrix._wrap(Q.data[:, :, order])


# ---------------------------------------------------------------------------
# derived quantities
# ---------------------------------------------------------------------------


def qmat_pinv(A: QMatrix) -> QMatrix:
    """Moore-Penrose pseudoinverse ``V diag(1/sigma) U*`` with the usual rank cutoff."""
    m, n = A.shape
    f = qsvd(A)
    if len(f.sigma) == 0:
        return QMatrix.zeros(n, m)
    tol = max(m, n) * np.finfo(float).eps * f.sigma[0]
    inv = np.where(f.sigma > tol, 1.0 / np.where(f.sigma > tol, f.sigma, 1.0), 0.0)
    return f.V.scale_columns(inv) @ f.U.H


def singular_values(A: QMatrix) -> np.ndarray:
    """Quaternion singular values, one per duplicated pair of ``chi_A``."""
    if min(A.shape) == 0:
        return np.zeros(0)
    s = sla.svdvals(to_full(A), check_finite=False)
    return s[0::2].copy()


def spectral_norm(A: QMatrix) -> float:
    """Largest singular value."""
    s = singular_values(A)
    return float(s[0]) if len(s) else 0.0


def condition_number(A: QMatrix) -> float:
    """``sigma_max / sigma_min``; ``inf`` for zero, wide or rank-deficient input."""
    m, n = A.shape
    if m < n or n == 0:
        return float(np.inf)
    s = sla.svdvals(to_full(A), check_finite=False)
    if s[-1] <= 0 or s[0] == 0:
        return float(np.inf)
    return float(s[0] / s[-1])


def orthonormal_basis(A: QMatrix, tol: float | None = None) -> QMatrix:
    """Orthonormal quaternion basis of ``range(A)``, with the pseudoinverse rank cutoff.

    For full column rank the basis is the unitary polar factor ``U V*`` of
    ``chi_A``.  It is unique, hence itself a full representation, and needs
    no pair bookkeeping.  Otherwise the leading left singular vectors of
    :func:`qsvd` are used.
    """
    m, n = A.shape
    if min(m, n) == 0:
        return QMatrix.zeros(m, 0)
    U, s, V = complex_svd(to_full(A))
    if s[0] == 0:
        return QMatrix.zeros(m, 0)
    if tol is None:
        tol = max(m, n) * np.finfo(float).eps * s[0]
    if m >= n and s[-1] > tol:
        return from_full(U @ V.conj().T)
    f = qsvd(A)
    k = int(np.sum(f.sigma > tol))
    return f.U[:, :k]


def orthonormal_complement(Q: QMatrix) -> QMatrix:
    """Orthonormal ``Q_perp`` (``m x (m - k)``) with ``[Q, Q_perp]`` unitary, for orthonormal ``Q``."""
    m, k = Q.shape
    if k >= m:
        return QMatrix.zeros(m, 0)
    chi = to_full(Q)
    full_q, _ = sla.qr(chi, mode="full", check_finite=False)
    return from_compact(pair_basis(full_q[:, 2 * k :], m - k))
