"""Error metrics, bound evaluators and Monte Carlo checks.

The bound evaluators are plain arithmetic.  The Monte Carlo checks draw
every trial from its own stream ``trial_stream(seed, purpose, trial)``, so
a report does not depend on the order in which trials are run.  Random
quaternion Gaussian matrices have four independent standard normal planes,
so every entry has ``E|g|^2 = 4``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .complex_bridge import solve_quaternion_linear
from .errors import ParameterError, PreconditionError, RankDeficientError, ShapeError
from .factorizations import orthonormal_basis, orthonormal_complement, qsvd, singular_values
from .quaternion import QMatrix
from .rng import trial_stream
from .sketching import ApproxResult, EmbeddingKind, random_qmatrix

__all__ = [
    "relative_error",
    "range_distance",
    "SpectrumTail",
    "spectrum_tail",
    "f_ratio",
    "gaussian_qb_bound",
    "gaussian_qb_bound_closed",
    "fixed_rank_bound",
    "BoundReport",
    "REPORT_COLUMNS",
    "reports_to_csv",
    "mc_check_sgt",
    "mc_check_pinv_norm",
    "ExtremeSingvalReport",
    "mc_extreme_singvals",
    "AvOmegaReport",
    "mc_check_avomega",
    "avomega_scaling",
    "QbIdentity",
    "qb_identity_terms",
    "planted_sketch",
]

REPORT_COLUMNS = ("metric", "theory", "empirical", "std_err", "trials", "pass")


# ---------------------------------------------------------------------------
# error metrics
# ---------------------------------------------------------------------------


def relative_error(A: QMatrix, approx) -> float:
    """``||A - A_hat||_F / ||A||_F`` for an :class:`ApproxResult` or a plain matrix.

    Raises ``ZeroDivisionError`` when ``A`` is zero.
    """
    A_hat = approx.reconstruct() if isinstance(approx, ApproxResult) else approx
    if A_hat.shape != A.shape:
        raise ShapeError(f"approximation is {A_hat.shape}, matrix is {A.shape}")
    na = A.fro_norm()
    if na == 0.0:
        raise ZeroDivisionError("relative error of the zero matrix is undefined")
    return (A - A_hat).fro_norm() / na


def _full_rank_basis(M: QMatrix, name: str) -> QMatrix:
    Q = orthonormal_basis(M)
    if Q.cols < M.cols:
        raise RankDeficientError(f"{name} has numerical rank {Q.cols} < {M.cols} columns")
    return Q


def range_distance(H: QMatrix, Y: QMatrix) -> float:
    """``||H H^dagger - Y Y^dagger||_F`` for full column rank ``H`` and ``Y``.

    Both projectors are formed from orthonormal bases (the numerical rank
    uses the pseudoinverse cutoff), and the distance is evaluated as
    ``sqrt(||(I - P_Y) Q_H||^2 + ||(I - P_H) Q_Y||^2)``.  This equals the
    projector difference exactly but does not lose accuracy to cancellation
    when the ranges are close.
    """
    if H.rows != Y.rows:
        raise ShapeError(f"H has {H.rows} rows, Y has {Y.rows}")
    Qh = _full_rank_basis(H, "H")
    Qy = _full_rank_basis(Y, "Y")
    a = (Qh - Qy @ (Qy.H @ Qh)).fro_norm()
    b = (Qy - Qh @ (Qh.H @ Qy)).fro_norm()
    return math.hypot(a, b)


@dataclass(frozen=True)
class SpectrumTail:
    sigma: np.ndarray
    r: int
    tail_fro: float
    tail_spec: float


def spectrum_tail(sigma, r: int) -> SpectrumTail:
    """Split a singular value list after the first ``r`` entries."""
    s = np.sort(np.asarray(sigma, dtype=np.float64))[::-1]
    if not 0 <= r <= len(s):
        raise ParameterError(f"cut index r={r} outside [0, {len(s)}]")
    tail = s[r:]
    spec = float(tail[0]) if len(tail) else 0.0
    return SpectrumTail(s, r, float(np.sqrt(np.sum(tail**2))), spec)


# ---------------------------------------------------------------------------
# closed-form bounds
# ---------------------------------------------------------------------------


def f_ratio(n: int, m: int) -> float:
    """``f(n, m) = 4n / (4(m - n) + 2)``, the quaternion oversampling factor."""
    return 4.0 * n / (4.0 * (m - n) + 2.0)


def _check_rsl(r, s, l):
    if not l > s > r >= 1:
        raise ParameterError(f"bound is only finite for l > s > r >= 1, got r={r}, s={s}, l={l}")


def gaussian_qb_bound(r: int, s: int, l: int, tail_fro: float) -> float:
    """Expected ``||A - H X||_F^2`` for Gaussian test matrices, ``(1+f(s,l))(1+f(r,s)) tail^2``."""
    _check_rsl(r, s, l)
    return (1.0 + f_ratio(s, l)) * (1.0 + f_ratio(r, s)) * tail_fro**2


def gaussian_qb_bound_closed(r: int, s: int, l: int, tail_fro: float) -> float:
    """The same bound written as ``(2l+1)(2s+1) / ((2(l-s)+1)(2(s-r)+1)) tail^2``."""
    _check_rsl(r, s, l)
    return (2 * l + 1) / (2 * (l - s) + 1) * (2 * s + 1) / (2 * (s - r) + 1) * tail_fro**2


def fixed_rank_bound(r: int, s: int, l: int, kappa_H: float, tail_fro: float) -> float:
    """``((1 + kappa) sqrt((1+f(s,l))(1+f(r,s))) + kappa) tail`` for the truncated approximation."""
    _check_rsl(r, s, l)
    if not kappa_H >= 1.0:
        raise ParameterError(f"kappa_H must be at least 1, got {kappa_H}")
    root = math.sqrt((1.0 + f_ratio(s, l)) * (1.0 + f_ratio(r, s)))
    return ((1.0 + kappa_H) * root + kappa_H) * tail_fro


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class BoundReport:
    """Empirical mean of a random quantity next to its theoretical value.

    ``passed`` is set when ``|empirical_mean - theory| <= 3 std_err``.
    ``qb_bound`` and ``fixed_rank_bound`` are filled in by checks that
    concern a sketch with parameters ``(r, s, l, kappa_H)``.
    """

    metric: str
    theory: float
    empirical_mean: float
    std_err: float
    trials: int
    passed: bool
    parameters: dict = field(default_factory=dict)
    qb_bound: float | None = None
    fixed_rank_bound: float | None = None

    def as_row(self) -> dict:
        return {
            "metric": self.metric,
            "theory": repr(float(self.theory)),
            "empirical": repr(float(self.empirical_mean)),
            "std_err": repr(float(self.std_err)),
            "trials": str(self.trials),
            "pass": "1" if self.passed else "0",
        }


def reports_to_csv(reports, fh=None) -> str:
    """Write reports as CSV with :data:`REPORT_COLUMNS`; return the text."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for rep in reports:
        writer.writerow(rep.as_row())
    text = buf.getvalue()
    if fh is not None:
        fh.write(text)
    return text


def _mean_report(metric, theory, samples, parameters) -> BoundReport:
    samples = np.asarray(samples, dtype=np.float64)
    mean = float(samples.mean())
    se = float(samples.std(ddof=1) / math.sqrt(len(samples)))
    passed = abs(mean - theory) <= 3.0 * se
    return BoundReport(metric, float(theory), mean, se, len(samples), bool(passed), parameters)


# ---------------------------------------------------------------------------
# Monte Carlo checks
# ---------------------------------------------------------------------------


def mc_check_sgt(S: QMatrix, T: QMatrix, trials: int = 500, seed: int = 0) -> BoundReport:
    """Check ``E ||S G T||_F^2 = 4 ||S||_F^2 ||T||_F^2`` for Gaussian ``G``."""
    if trials < 100:
        raise ParameterError(f"mc_check_sgt needs at least 100 trials, got {trials}")
    p, q = S.cols, T.rows
    samples = [
        (S @ random_qmatrix(trial_stream(seed, "sgt", t), p, q) @ T).fro_norm() ** 2 for t in range(trials)
    ]
    theory = 4.0 * S.fro_norm() ** 2 * T.fro_norm() ** 2
    return _mean_report("E|SGT|_F^2", theory, samples, {"S": S.shape, "T": T.shape})


def mc_check_pinv_norm(m: int, n: int, trials: int = 500, seed: int = 0) -> BoundReport:
    """Check ``E ||G^dagger||_F^2 = m / (4(n - m) + 2)`` for an ``m x n`` Gaussian ``G``."""
    if not 0 < m < n:
        raise ParameterError(f"need 0 < m < n, got m={m}, n={n}")
    if trials < 200:
        raise ParameterError(f"mc_check_pinv_norm needs at least 200 trials, got {trials}")
    samples = []
    for t in range(trials):
        sv = singular_values(random_qmatrix(trial_stream(seed, "pinv", t), m, n))
        samples.append(float(np.sum(1.0 / sv**2)))
    return _mean_report("E|G^+|_F^2", m / (4.0 * (n - m) + 2.0), samples, {"m": m, "n": n})


@dataclass
class ExtremeSingvalReport:
    N: int
    n: int
    kind: str
    min_ratio: np.ndarray  # sigma_min / (2 sqrt(N)) per trial
    max_ratio: np.ndarray  # sigma_max / (2 sqrt(N)) per trial
    lower: float
    upper: float

    @property
    def trials(self) -> int:
        return len(self.min_ratio)

    @property
    def passed(self) -> bool:
        return bool(np.all(self.min_ratio >= self.lower) and np.all(self.max_ratio <= self.upper))

    def as_reports(self) -> list[BoundReport]:
        se = lambda x: float(np.std(x, ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
        lo = BoundReport(
            f"min sigma_min/2sqrtN ({self.kind})", self.lower, float(np.min(self.min_ratio)),
            se(self.min_ratio), self.trials, bool(np.all(self.min_ratio >= self.lower)),
        )
        hi = BoundReport(
            f"max sigma_max/2sqrtN ({self.kind})", self.upper, float(np.max(self.max_ratio)),
            se(self.max_ratio), self.trials, bool(np.all(self.max_ratio <= self.upper)),
        )
        return [lo, hi]


def mc_extreme_singvals(
    N: int, n: int, trials: int = 50, seed: int = 0, kind="gaussian", *, c_fit: float = 2.0, slack: float = 0.1
) -> ExtremeSingvalReport:
    """Extreme singular values of tall random ``N x n`` quaternion matrices.

    The envelope ``1 -/+ (c_fit sqrt(n / N) + slack)`` uses empirically
    calibrated constants; it checks the ``2 sqrt(N)`` scale, not a
    sharp constant.
    """
    if N <= 4 * n:
        raise ParameterError(f"need N > 4n, got N={N}, n={n}")
    kind = EmbeddingKind(kind)
    lo, hi = [], []
    for t in range(trials):
        sv = singular_values(random_qmatrix(trial_stream(seed, f"extreme-{kind.value}", t), N, n, kind))
        lo.append(sv[-1])
        hi.append(sv[0])
    scale = 2.0 * math.sqrt(N)
    width = c_fit * math.sqrt(n / N) + slack
    return ExtremeSingvalReport(N, n, kind.value, np.array(lo) / scale, np.array(hi) / scale, 1 - width, 1 + width)


@dataclass
class AvOmegaReport:
    s: int
    dim: int  # min(N, m)
    ratios: np.ndarray  # ||A V Omega||_F / (2 sqrt(s) ||A||_F) per trial

    def quantile(self, q: float) -> float:
        return float(np.quantile(self.ratios, q))

    @property
    def p99(self) -> float:
        return self.quantile(0.99)

    @property
    def envelope(self) -> float:
        """``sqrt(log(s min(N, m)))``, floored at 1 so that tiny sizes stay meaningful."""
        return math.sqrt(max(math.log(self.s * self.dim), 1.0))


def mc_check_avomega(A: QMatrix, V: QMatrix, s: int, trials: int = 1000, seed: int = 0) -> AvOmegaReport:
    """Sample ``||A V Omega||_F / (2 sqrt(s) ||A||_F)`` for Gaussian ``Omega`` (``n x s``).

    ``A`` is ``N x m`` and ``V`` is ``m x n`` with orthonormal rows.  A zero
    ``A`` gives ratio 0 on every trial.
    """
    if A.cols != V.rows:
        raise ShapeError(f"A is {A.shape}, V is {V.shape}")
    m, n = V.shape
    if m > n or not (V @ V.H).allclose(QMatrix.eye(m), atol=1e-8, rtol=0.0):
        raise PreconditionError("V must have orthonormal rows (V V* = I within 1e-8)")
    AV = A @ V
    na = A.fro_norm()
    ratios = np.zeros(trials)
    if na > 0:
        for t in range(trials):
            omega = random_qmatrix(trial_stream(seed, "avomega", t), n, s)
            ratios[t] = (AV @ omega).fro_norm() / (2.0 * math.sqrt(s) * na)
    return AvOmegaReport(s, min(A.rows, m), ratios)


def avomega_scaling(sizes, trials: int = 1000, seed: int = 0, slack: float = 0.1):
    """Run :func:`mc_check_avomega` on a grid of ``(N, m, n, s)`` and check the growth rate.

    Each instance uses a Gaussian ``A`` and a ``V`` with orthonormal rows.
    The check passes when, relative to the first grid point, the 99th
    percentile never grows faster than ``sqrt(log(s min(N, m)))`` (up to a
    factor ``1 + slack``).  Returns ``(reports, passed)``.
    """
    reports = []
    for k, (N, m, n, s) in enumerate(sizes):
        if m > n:
            raise ParameterError(f"V must be wide, got m={m} > n={n}")
        g = trial_stream(seed, "avomega-grid", k)
        A = random_qmatrix(g, N, m)
        V = qsvd(random_qmatrix(g, m, n)).V.H
        reports.append(mc_check_avomega(A, V, s, trials, seed + k))
    base = reports[0].p99 / reports[0].envelope
    passed = all(rep.p99 / rep.envelope <= base * (1.0 + slack) for rep in reports)
    return reports, passed


# ---------------------------------------------------------------------------
# QB error decomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QbIdentity:
    """``||A - H X||^2 = ||A - Q Q* A||^2 + ||Psi_2^dagger Psi_1 Q_perp* A||^2``."""

    total: float  # ||A - H X||_F^2
    projection: float  # ||A - Q Q* A||_F^2
    sketch: float  # ||Psi_2^dagger Psi_1 Q_perp* A||_F^2

    @property
    def relative_gap(self) -> float:
        rhs = self.projection + self.sketch
        return abs(self.total - rhs) / max(self.total, rhs, np.finfo(float).tiny)


def qb_identity_terms(A: QMatrix, H: QMatrix, X: QMatrix, psi: QMatrix) -> QbIdentity:
    """Evaluate both sides of the QB error decomposition.

    ``Q`` is an orthonormal basis of ``range(H)`` (the range of the sketch
    ``Y`` when ``Y`` has full column rank) and ``Q_perp`` completes it;
    ``Psi_2 = Psi Q`` and ``Psi_1 = Psi Q_perp``.
    """
    Q = orthonormal_basis(H)
    Qp = orthonormal_complement(Q)
    total = (A - H @ X).fro_norm() ** 2
    projection = (A - Q @ (Q.H @ A)).fro_norm() ** 2
    if Qp.cols == 0:
        return QbIdentity(total, projection, 0.0)
    rhs = (psi @ Qp) @ (Qp.H @ A)
    sketch = solve_quaternion_linear(psi @ Q, rhs).fro_norm() ** 2
    return QbIdentity(total, projection, sketch)


# ---------------------------------------------------------------------------
# sketches with a planted condition number
# ---------------------------------------------------------------------------


def _unit_quaternions(g, k: int) -> QMatrix:
    q = g.standard_normal((4, k))
    q /= np.linalg.norm(q, axis=0)
    data = np.zeros((4, k, k))
    data[:, np.arange(k), np.arange(k)] = q
    return QMatrix(data)


def planted_sketch(m: int, s: int, kappa: float, seed: int = 0, *, graded: bool = False):
    """Random ``m x s`` matrix ``Y = U diag(sigma) V*`` with ``kappa(Y) = kappa``; returns ``(Y, U)``.

    ``U`` has orthonormal columns and ``sigma`` is log-spaced from 1 to
    ``1 / kappa``.  By default ``V`` is a random unitary matrix, so every
    column of ``Y`` mixes all singular directions and ``range(Y)`` is only
    determined to about ``eps * kappa``.  With ``graded=True`` ``V`` is a
    diagonal of random unit quaternions: the columns of ``Y`` are then
    mutually orthogonal with norms spread over ``[1 / kappa, 1]``, and
    ``range(Y)`` stays well determined at any ``kappa``.
    """
    if not m > s >= 1:
        raise ParameterError(f"need m > s >= 1, got m={m}, s={s}")
    if not kappa >= 1.0:
        raise ParameterError(f"kappa must be at least 1, got {kappa}")
    g = trial_stream(seed, "planted-sketch", 0)
    U = qsvd(random_qmatrix(g, m, s)).U
    V = _unit_quaternions(g, s) if graded else qsvd(random_qmatrix(g, s, s)).U
    sigma = np.logspace(0.0, -math.log10(kappa), s)
    return U.scale_columns(sigma) @ V.H, U
