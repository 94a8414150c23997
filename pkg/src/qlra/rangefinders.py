"""Rangefinders for quaternion sketches.

``pseudo_qr`` orthonormalizes only the compact representation ``Y_c`` and
then improves the conditioning of the resulting quaternion basis with a few
range-preserving correction steps ``H <- (1 - eps) H + eps (H^dagger)*``.

``pseudo_svd`` returns an orthonormal quaternion basis read off the complex
SVD of ``chi_Y``; singular pairs that fail to separate numerically are
re-paired either through a randomly rescaled auxiliary SVD or by pivoted
Gram-Schmidt.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .complex_bridge import (
    from_compact,
    solve_quaternion_linear,
    to_compact,
    to_full,
)
from .errors import ParameterError, RankDeficientError, ShapeError, SingularMatrixError
from .factorizations import (
    FLOOR_TOL,
    classify_pairs,
    complex_qr,
    complex_svd,
    condition_number,
    pair_basis,
)
from .quaternion import QMatrix
from .rng import stream

__all__ = [
    "Method",
    "PseudoQrConfig",
    "RangefinderReport",
    "pseudo_qr",
    "correction_step",
    "estimate_epsilon",
    "pseudo_svd",
    "find_range",
]

DELTA_MAX = math.sqrt(7.0) / 2.0
# Correction solves involve chi(H*H), whose condition number is kappa(H)^2.
# They are accepted as long as that stays below 1e16.
CORRECTION_RCOND_TOL = 1e-16
EPS_CLAMP = 0.999


class Method(str, enum.Enum):
    PSEUDO_QR = "pseudo-qr"
    PSEUDO_SVD = "pseudo-svd"


@dataclass(frozen=True)
class PseudoQrConfig:
    max_correction_steps: int = 3
    power_iters_for_epsilon: int = 3
    delta_budget: float = 1.2
    kappa_target: float = 10.0

    def __post_init__(self):
        if self.max_correction_steps < 0:
            raise ParameterError("max_correction_steps must be nonnegative")
        if self.power_iters_for_epsilon < 1:
            raise ParameterError("power_iters_for_epsilon must be at least 1")
        if not 1.0 <= self.delta_budget <= round(DELTA_MAX, 4):
            raise ParameterError(f"delta_budget must lie in [1, {DELTA_MAX:.4f}], got {self.delta_budget}")

    @property
    def kappa_threshold(self) -> float:
        """Smallest kappa for which one step is guaranteed to take a square root."""
        d = self.delta_budget
        return max(2 * math.sqrt(2) * d, 2 * d * d + 0.5)


@dataclass
class RangefinderReport:
    H: QMatrix
    kappa_before: float
    kappa_after: float
    correction_steps_used: int
    method: Method
    range_distance: float | None = None
    kappa_history: list = field(default_factory=list)
    epsilons: list = field(default_factory=list)
    bad_count: int = 0
    bad_path: str | None = None
    timings: dict = field(default_factory=dict)


def _check_tall(Y: QMatrix):
    m, s = Y.shape
    if not m > s:
        raise ShapeError(f"sketch must have more rows than columns, got {Y.shape}")
    if s == 0:
        raise ShapeError("sketch has no columns")


# ---------------------------------------------------------------------------
# pseudo-QR
# ---------------------------------------------------------------------------


def correction_step(H: QMatrix, epsilon: float) -> QMatrix:
    """``(1 - eps) H + eps (H^dagger)*`` with ``H^dagger`` from ``chi_{H*H} Z = (H*)_c``."""
    if not 0.0 < epsilon < 1.0:
        raise ParameterError(f"epsilon must lie in (0, 1), got {epsilon}")
    pinv = solve_quaternion_linear(H.H @ H, H.H, symmetrize=True, rcond_tol=CORRECTION_RCOND_TOL)
    return H * (1.0 - epsilon) + pinv.H * epsilon


def estimate_epsilon(H: QMatrix, power_iters: int = 3, *, clamp: bool = True, seed: int = 0) -> float:
    """Estimate ``sigma_min(H)`` from above by power iteration on ``(H*H)^{-1}``.

    ``(H*H)^{-1}`` is applied as ``R^{-1} R^{-*}`` with ``R`` the triangular
    factor of ``chi_H``, so the solves see ``kappa(H)`` rather than
    ``kappa(H)^2``.  The Rayleigh quotient never exceeds
    ``1 / sigma_min^2``, so the returned ``1 / sqrt(quotient)`` is not below
    ``sigma_min`` beyond rounding.  With ``clamp`` the result is limited to
    ``(0, 0.999]``.  Raises :class:`SingularMatrixError` when ``R`` is
    numerically singular.
    """
    if power_iters < 1:
        raise ParameterError("power_iters must be at least 1")
    s = H.cols
    R = complex_qr(to_full(H)).R
    rcond, _ = lapack.ztrcon(R, norm="1", uplo="U", diag="N")
    if not rcond >= CORRECTION_RCOND_TOL:
        cond = np.inf if rcond == 0 else 1.0 / rcond
        raise SingularMatrixError(f"H is numerically rank deficient (cond ~ {cond:.3e})", cond)
    g = stream(seed, 2, s)
    x = g.standard_normal(2 * s) + 1j * g.standard_normal(2 * s)
    x /= np.linalg.norm(x)
    quotient = 0.0
    for _ in range(power_iters):
        z = sla.solve_triangular(R, x, trans="C", check_finite=False)
        y = sla.solve_triangular(R, z, check_finite=False)
        quotient = float(np.vdot(z, z).real)  # x* (H*H)^{-1} x
        x = y / np.linalg.norm(y)
    eps = 1.0 / math.sqrt(quotient) if quotient > 0 else 0.0
    if clamp:
        eps = min(max(eps, np.finfo(float).tiny), EPS_CLAMP)
    return eps


def pseudo_qr(Y: QMatrix, cfg: PseudoQrConfig | None = None) -> RangefinderReport:
    """Well-conditioned (not orthonormal) basis of ``range(Y)``.

    Raises :class:`RankDeficientError` when ``Y`` is numerically rank
    deficient or too ill-conditioned for the correction solves; use
    :func:`pseudo_svd` in that case.
    """
    cfg = cfg or PseudoQrConfig()
    _check_tall(Y)
    m, s = Y.shape
    qr = complex_qr(to_compact(Y))
    d = np.abs(np.diagonal(qr.R))
    if d.max() == 0 or d.min() <= max(2 * m, s) * np.finfo(float).eps * d.max():
        raise RankDeficientError(
            "sketch is numerically rank deficient in its compact representation; use pseudo_svd instead"
        )
    H = from_compact(qr.Q)
    kappa = condition_number(H)
    history, epsilons = [kappa], []
    if not np.isfinite(kappa):
        raise RankDeficientError("sketch is numerically rank deficient; use pseudo_svd instead")
    steps = 0
    try:
        while steps < cfg.max_correction_steps and kappa > cfg.kappa_target:
            eps = estimate_epsilon(H, cfg.power_iters_for_epsilon)
            H = correction_step(H, eps)
            kappa = condition_number(H)
            history.append(kappa)
            epsilons.append(eps)
            steps += 1
    except SingularMatrixError as err:
        raise RankDeficientError(
            f"sketch is too ill-conditioned for pseudo-QR (cond of chi(H*H) ~ {err.condition_estimate:.2e}); "
            "use pseudo_svd instead"
        ) from err
    return RangefinderReport(H, history[0], kappa, steps, Method.PSEUDO_QR, None, history, epsilons)


# ---------------------------------------------------------------------------
# pseudo-SVD
# ---------------------------------------------------------------------------


def _bad_part_svd(Ub: np.ndarray, t: int, rng: np.random.Generator):
    """Re-pair ``span(Ub)`` through the SVD of a randomly column-scaled ``chi_{H_b}``.

    Returns ``None`` if the auxiliary spectrum still does not split into
    ``t`` clean pairs.
    """
    Hb = from_compact(Ub)
    f = rng.uniform(0.0, 1.0, Hb.cols) + 1.0
    Uf, sf, _ = complex_svd(to_full(Hb.scale_columns(f)))
    lead = sf[: 2 * t]
    part = classify_pairs(lead, scale=lead[0])
    if len(part.bad) or len(part.good) != t:
        return None
    return Uf[:, part.good]


def pseudo_svd(Y: QMatrix, seed: int = 0) -> RangefinderReport:
    """Orthonormal quaternion basis ``H`` (``m x s``) with ``range(H) = range(Y)``."""
    _check_tall(Y)
    m, s = Y.shape
    U, sv, _ = complex_svd(to_full(Y))
    scale = float(sv[0])
    part = classify_pairs(sv, scale=scale, floor=FLOOR_TOL * scale)
    cols = [U[:, part.good]]
    t = part.bad_count
    path = None
    if t:
        idx = np.concatenate([g.indices for g in part.bad])
        Ub = U[:, idx]
        Hb = None
        if t <= math.ceil(s / 2):
            Hb = _bad_part_svd(Ub, t, stream(seed, 3, s, t))
            path = "svd"
        if Hb is None:
            Hb = pair_basis(Ub, t)
            path = "gram-schmidt"
        cols.append(Hb)
    H = from_compact(np.concatenate(cols, axis=1))
    kappa = condition_number(H)
    return RangefinderReport(H, kappa, kappa, 0, Method.PSEUDO_SVD, None, [kappa], [], t, path)


def find_range(Y: QMatrix, method="pseudo-svd", *, cfg: PseudoQrConfig | None = None, seed: int = 0):
    """Dispatch to :func:`pseudo_qr` or :func:`pseudo_svd` by name."""
    method = Method(method)
    if method is Method.PSEUDO_QR:
        return pseudo_qr(Y, cfg)
    return pseudo_svd(Y, seed=seed)
