"""Random test matrices, two-sided sketches and the one-pass approximation.

A sketch of ``A`` (``m x n``) is the pair ``Y = A Omega`` (``m x s``) and
``W = Psi A`` (``l x n``).  Both are linear in ``A``, so they can be built
from a stream of additive updates or row blocks without ever holding ``A``.
The approximation then runs in two stages that only touch the sketch:

* ``qb_stage``: ``H = rangefinder(Y)`` and ``X`` solving ``(Psi H) X = W`` in
  the least-squares sense, giving ``A ~ H X``;
* ``truncate_stage``: the best rank-``r`` approximation of ``X`` via QSVD,
  giving ``A ~ (H U_r) diag(sigma_r) V_r*``.
"""

from __future__ import annotations

import enum
import os
import struct
import time
from dataclasses import dataclass, field, replace
from typing import Iterator, Protocol

import numpy as np

from .complex_bridge import solve_quaternion_linear
from .errors import FormatError, ParameterError, ShapeError
from .factorizations import qsvd
from .io import qmat_to_bytes, read_qmat_record
from .quaternion import QMatrix, _right_table
from .rangefinders import Method, PseudoQrConfig, find_range
from .rng import TILE, check_seed, tile_stream
from .runtime import is_serial

__all__ = [
    "EmbeddingKind",
    "TestMatrixSpec",
    "gen_test_matrix",
    "gen_block",
    "random_qmatrix",
    "RowSource",
    "InMemorySource",
    "SketchState",
    "empty_sketch",
    "make_sketch",
    "sketch_update",
    "qb_stage",
    "truncate_stage",
    "ApproxResult",
    "one_pass_approx",
    "default_sizes",
    "checkpoint_to_bytes",
    "checkpoint_from_bytes",
    "save_checkpoint",
    "load_checkpoint",
]

DEFAULT_DENSITY = 0.1


class EmbeddingKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    RADEMACHER = "rademacher"
    SPARSE_GAUSSIAN = "sparse-gaussian"
    SPARSE_RADEMACHER = "sparse-rademacher"

    @property
    def sparse(self) -> bool:
        return self in (EmbeddingKind.SPARSE_GAUSSIAN, EmbeddingKind.SPARSE_RADEMACHER)


_KIND_TAGS = {kind: tag for tag, kind in enumerate(EmbeddingKind)}
_TAG_KINDS = {tag: kind for kind, tag in _KIND_TAGS.items()}


@dataclass(frozen=True)
class TestMatrixSpec:
    """Recipe for a reproducible random quaternion test matrix."""

    __test__ = False  # not a pytest class

    kind: EmbeddingKind
    rows: int
    cols: int
    seed: int
    density: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", EmbeddingKind(self.kind))
        if self.rows < 0 or self.cols < 0:
            raise ParameterError(f"negative dimensions {self.rows}x{self.cols}")
        object.__setattr__(self, "seed", check_seed(self.seed))
        density = self.density
        if density is None:
            density = DEFAULT_DENSITY if self.kind.sparse else 1.0
        density = float(density)
        if not 0.0 < density <= 1.0:
            raise ParameterError(f"density must lie in (0, 1], got {density}")
        object.__setattr__(self, "density", density)


def _draw(g: np.random.Generator, kind: EmbeddingKind, shape, density: float) -> np.ndarray:
    """Centered unit-variance real entries of the given kind."""
    if kind.sparse:
        mask = g.random(shape) < density
    if kind in (EmbeddingKind.GAUSSIAN, EmbeddingKind.SPARSE_GAUSSIAN):
        vals = g.standard_normal(shape)
    else:
        vals = g.integers(0, 2, shape).astype(np.float64) * 2.0 - 1.0
    if kind.sparse:
        vals = np.where(mask, vals / np.sqrt(density), 0.0)
    return vals


def _tile(spec: TestMatrixSpec, plane: int, ti: int, tj: int) -> np.ndarray:
    th = min(TILE, spec.rows - ti * TILE)
    tw = min(TILE, spec.cols - tj * TILE)
    return _draw(tile_stream(spec.seed, plane, ti, tj), spec.kind, (th, tw), spec.density)


def random_qmatrix(g: np.random.Generator, m: int, n: int, kind="gaussian", density=None) -> QMatrix:
    """Random quaternion matrix drawn from an existing generator, one plane after another."""
    kind = EmbeddingKind(kind)
    if density is None:
        density = DEFAULT_DENSITY if kind.sparse else 1.0
    return QMatrix._wrap(np.stack([_draw(g, kind, (m, n), density) for _ in range(4)]))


def gen_block(spec: TestMatrixSpec, r0: int, r1: int, c0: int, c1: int) -> QMatrix:
    """Rows ``r0:r1`` and columns ``c0:c1`` of the test matrix, generated tile by tile."""
    if not (0 <= r0 <= r1 <= spec.rows and 0 <= c0 <= c1 <= spec.cols):
        raise ShapeError(f"block [{r0}:{r1}, {c0}:{c1}] outside {spec.rows}x{spec.cols}")
    out = np.zeros((4, r1 - r0, c1 - c0))
    if r1 == r0 or c1 == c0:
        return QMatrix._wrap(out)
    for plane in range(4):
        for ti in range(r0 // TILE, (r1 - 1) // TILE + 1):
            for tj in range(c0 // TILE, (c1 - 1) // TILE + 1):
                tile = _tile(spec, plane, ti, tj)
                a0, a1 = max(r0, ti * TILE), min(r1, (ti + 1) * TILE)
                b0, b1 = max(c0, tj * TILE), min(c1, (tj + 1) * TILE)
                out[plane, a0 - r0 : a1 - r0, b0 - c0 : b1 - c0] = tile[
                    a0 - ti * TILE : a1 - ti * TILE, b0 - tj * TILE : b1 - tj * TILE
                ]
    return QMatrix._wrap(out)


def gen_test_matrix(spec: TestMatrixSpec) -> QMatrix:
    """The full test matrix described by ``spec``; identical on every call."""
    return gen_block(spec, 0, spec.rows, 0, spec.cols)


# ---------------------------------------------------------------------------
# data sources
# ---------------------------------------------------------------------------


class RowSource(Protocol):
    """Anything that can stream a matrix as consecutive row blocks."""

    shape: tuple

    def row_blocks(self, block_rows: int) -> Iterator[tuple[int, QMatrix]]: ...


class InMemorySource:
    def __init__(self, A: QMatrix):
        self.A = A
        self.shape = A.shape

    def row_blocks(self, block_rows: int):
        for start in range(0, self.shape[0], block_rows):
            yield start, self.A[start : start + block_rows, :]


# ---------------------------------------------------------------------------
# sketch state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SketchState:
    Y: QMatrix
    W: QMatrix
    omega_spec: TestMatrixSpec
    psi_spec: TestMatrixSpec
    r: int
    s: int
    l: int
    omega_override: QMatrix | None = field(default=None, repr=False)
    psi_override: QMatrix | None = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return self.Y.rows

    @property
    def n(self) -> int:
        return self.W.cols

    def omega(self) -> QMatrix:
        return self.omega_override if self.omega_override is not None else gen_test_matrix(self.omega_spec)

    def psi(self) -> QMatrix:
        return self.psi_override if self.psi_override is not None else gen_test_matrix(self.psi_spec)

    def psi_columns(self, c0: int, c1: int) -> QMatrix:
        if self.psi_override is not None:
            return self.psi_override[:, c0:c1]
        return gen_block(self.psi_spec, 0, self.psi_spec.rows, c0, c1)


def default_sizes(r: int, s: int | None = None, l: int | None = None):
    """Fill in ``s = r + 5`` and ``l = 2 s`` when not given."""
    s = r + 5 if s is None else s
    l = 2 * s if l is None else l
    return r, s, l


def _check_sizes(m, n, r, s, l):
    if r < 1:
        raise ParameterError(f"rank must be positive, got {r}")
    if not r <= s <= l <= min(m, n):
        raise ParameterError(f"need r <= s <= l <= min(m, n); got r={r}, s={s}, l={l}, min(m, n)={min(m, n)}")


def empty_sketch(
    m: int,
    n: int,
    r: int,
    s: int,
    l: int,
    omega_seed: int = 0,
    psi_seed: int = 1,
    *,
    kind="gaussian",
    density=None,
    omega: QMatrix | None = None,
    psi: QMatrix | None = None,
) -> SketchState:
    """Sketch of the ``m x n`` zero matrix, ready for streaming updates."""
    _check_sizes(m, n, r, s, l)
    omega_spec = TestMatrixSpec(kind, n, s, omega_seed, density)
    psi_spec = TestMatrixSpec(kind, l, m, psi_seed, density)
    if omega is not None and omega.shape != (n, s):
        raise ShapeError(f"injected Omega must be {n}x{s}, got {omega.shape}")
    if psi is not None and psi.shape != (l, m):
        raise ShapeError(f"injected Psi must be {l}x{m}, got {psi.shape}")
    return SketchState(QMatrix.zeros(m, s), QMatrix.zeros(l, n), omega_spec, psi_spec, r, s, l, omega, psi)


def _accumulate(state: SketchState, start: int, block: QMatrix) -> SketchState:
    stop = start + block.rows
    omega = state.omega()
    psi_cols = state.psi_columns(start, stop)
    y = np.array(state.Y.data)
    w = np.array(state.W.data)
    if is_serial():
        # one source row at a time, in row order: the result does not depend
        # on how the rows were grouped into blocks
        t_omega = _right_table(omega.data)
        s = state.s
        bd, pd = block.data, psi_cols.data
        for i in range(block.rows):
            row = np.concatenate(bd[:, i : i + 1, :], axis=1)  # 1 x 4n
            y[:, start + i, :] += (row @ t_omega).reshape(4, s)
            col = np.concatenate(pd[:, :, i : i + 1], axis=1)  # l x 4
            w += (col @ _right_table(bd[:, i : i + 1, :])).reshape(state.l, 4, state.n).transpose(1, 0, 2)
    else:
        y[:, start:stop, :] += (block @ omega).data
        w += (psi_cols @ block).data
    return replace(state, Y=QMatrix._wrap(y), W=QMatrix._wrap(w))


def sketch_update(state: SketchState, delta: QMatrix | None = None, *, rows=None, block: QMatrix | None = None):
    """Apply a linear update to the sketch and return the new state.

    ``sketch_update(state, delta)`` adds a full ``m x n`` matrix.
    ``sketch_update(state, rows=start, block=B)`` (or ``rows=(start, stop)``)
    adds ``B`` to rows ``start:stop`` of the sketched matrix; only the
    matching rows of ``Y`` and columns of ``Psi`` are involved.
    """
    if delta is not None:
        if block is not None or rows is not None:
            raise ParameterError("give either a full delta or a row block, not both")
        if delta.shape != (state.m, state.n):
            raise ShapeError(f"delta must be {state.m}x{state.n}, got {delta.shape}")
        return _accumulate(state, 0, delta)
    if block is None or rows is None:
        raise ParameterError("a row-block update needs both rows and block")
    if isinstance(rows, (tuple, list, range)):
        start, stop = (rows.start, rows.stop) if isinstance(rows, range) else rows
    else:
        start, stop = int(rows), int(rows) + block.rows
    if block.shape != (stop - start, state.n) or not 0 <= start <= stop <= state.m:
        raise ShapeError(f"block {block.shape} does not fit rows {start}:{stop} of a {state.m}x{state.n} matrix")
    return _accumulate(state, start, block)


def make_sketch(
    A,
    r: int,
    s: int,
    l: int,
    omega_seed: int = 0,
    psi_seed: int = 1,
    *,
    kind="gaussian",
    density=None,
    omega: QMatrix | None = None,
    psi: QMatrix | None = None,
    block_rows: int = 256,
) -> SketchState:
    """``Y = A Omega`` and ``W = Psi A`` for a matrix or a :class:`RowSource`.

    A row source is read exactly once, block by block.
    """
    m, n = A.shape
    state = empty_sketch(m, n, r, s, l, omega_seed, psi_seed, kind=kind, density=density, omega=omega, psi=psi)
    if isinstance(A, QMatrix):
        if is_serial():
            return _accumulate(state, 0, A)
        om, ps = state.omega(), state.psi()
        return replace(state, Y=A @ om, W=ps @ A)
    for start, blk in A.row_blocks(block_rows):
        state = _accumulate(state, start, blk)
    return state


# ---------------------------------------------------------------------------
# approximation stages
# ---------------------------------------------------------------------------


@dataclass
class ApproxResult:
    """Rank-``r`` factors ``A ~ H diag(sigma) V*`` plus diagnostics."""

    H: QMatrix
    sigma: np.ndarray
    V: QMatrix
    diagnostics: dict = field(default_factory=dict)

    @property
    def rank(self) -> int:
        return len(self.sigma)

    def reconstruct(self) -> QMatrix:
        return self.H.scale_columns(self.sigma) @ self.V.H


def qb_stage(state: SketchState, rangefinder="pseudo-svd", *, cfg: PseudoQrConfig | None = None, seed: int = 0):
    """Return ``(H, X, report)`` with ``A ~ H X``; only the sketch is used."""
    t0 = time.perf_counter()
    report = find_range(state.Y, rangefinder, cfg=cfg, seed=seed)
    t1 = time.perf_counter()
    H = report.H
    X = solve_quaternion_linear(state.psi() @ H, state.W)
    t2 = time.perf_counter()
    report.timings = {"rangefinder": t1 - t0, "solve": t2 - t1}
    return H, X, report


def truncate_stage(H: QMatrix, X: QMatrix, r: int) -> ApproxResult:
    """Keep the leading ``r`` singular triples of ``X`` and fold ``U_r`` into ``H``."""
    if r < 1 or r > X.rows:
        raise ParameterError(f"rank r={r} must lie in [1, {X.rows}]")
    t0 = time.perf_counter()
    f = qsvd(X)
    result = ApproxResult(H @ f.U[:, :r], f.sigma[:r].copy(), f.V[:, :r])
    result.diagnostics["times"] = {"truncate": time.perf_counter() - t0}
    return result


def one_pass_approx(
    source,
    r: int,
    s: int | None = None,
    l: int | None = None,
    rangefinder="pseudo-svd",
    omega_seed: int = 0,
    psi_seed: int = 1,
    *,
    kind="gaussian",
    density=None,
    cfg: PseudoQrConfig | None = None,
    rangefinder_seed: int = 0,
) -> ApproxResult:
    """Rank-``r`` approximation from one pass over ``source``.

    ``source`` may be an in-memory matrix, a :class:`RowSource` or an
    existing :class:`SketchState` (sizes and seeds then come from the state).
    Relative and QB errors are reported only for in-memory matrices; a row
    source is never read after the sketch is complete.
    """
    times = {}
    t0 = time.perf_counter()
    if isinstance(source, SketchState):
        state = source
        r = state.r if r is None else r
        if r > state.s:
            raise ParameterError(f"rank r={r} exceeds the sketch size s={state.s}")
    else:
        r, s, l = default_sizes(r, s, l)
        state = make_sketch(source, r, s, l, omega_seed, psi_seed, kind=kind, density=density)
    times["sketch"] = time.perf_counter() - t0
    A = source if isinstance(source, QMatrix) else None

    if state.Y.fro_norm() == 0.0:
        res = ApproxResult(QMatrix.zeros(state.m, r), np.zeros(r), QMatrix.eye(state.n, r))
        res.diagnostics.update(kappa_H=1.0, times=times, rangefinder=Method(rangefinder).value)
        if A is not None:
            res.diagnostics["qb_residual"] = A.fro_norm()
            res.diagnostics["relative_error"] = 0.0 if A.fro_norm() == 0 else 1.0
        return res

    H, X, report = qb_stage(state, rangefinder, cfg=cfg, seed=rangefinder_seed)
    times.update(report.timings)
    res = truncate_stage(H, X, r)
    times.update(res.diagnostics["times"])
    res.diagnostics.update(
        kappa_H=report.kappa_after,
        kappa_H_before=report.kappa_before,
        correction_steps=report.correction_steps_used,
        rangefinder=report.method.value,
        times=times,
    )
    if A is not None:
        na = A.fro_norm()
        res.diagnostics["qb_residual"] = (A - H @ X).fro_norm()
        res.diagnostics["relative_error"] = (A - res.reconstruct()).fro_norm() / na if na else 0.0
    return res


# ---------------------------------------------------------------------------
# checkpoint files
# ---------------------------------------------------------------------------

QSKT_MAGIC = b"QSKT1\0"
_SPEC = struct.Struct("<BQQQd")
_SIZES = struct.Struct("<QQQ")


def _spec_bytes(spec: TestMatrixSpec) -> bytes:
    return _SPEC.pack(_KIND_TAGS[spec.kind], spec.rows, spec.cols, spec.seed, spec.density)


def _spec_from(buf, offset):
    if len(buf) < offset + _SPEC.size:
        raise FormatError("truncated QSKT1 spec record")
    tag, rows, cols, seed, density = _SPEC.unpack_from(buf, offset)
    if tag not in _TAG_KINDS:
        raise FormatError(f"unknown test-matrix kind tag {tag}")
    try:
        spec = TestMatrixSpec(_TAG_KINDS[tag], rows, cols, seed, density)
    except ParameterError as err:
        raise FormatError(str(err)) from err
    return spec, offset + _SPEC.size


def checkpoint_to_bytes(state: SketchState) -> bytes:
    """Serialize a sketch as ``QSKT1``: magic, two spec records, ``r, s, l``, then ``Y`` and ``W`` as QMAT1."""
    if state.omega_override is not None or state.psi_override is not None:
        raise ParameterError("sketches with injected test matrices cannot be checkpointed")
    return b"".join(
        [
            QSKT_MAGIC,
            _spec_bytes(state.omega_spec),
            _spec_bytes(state.psi_spec),
            _SIZES.pack(state.r, state.s, state.l),
            qmat_to_bytes(state.Y),
            qmat_to_bytes(state.W),
        ]
    )


def checkpoint_from_bytes(raw: bytes) -> SketchState:
    buf = memoryview(raw)
    if bytes(buf[: len(QSKT_MAGIC)]) != QSKT_MAGIC:
        raise FormatError("missing QSKT1 magic")
    off = len(QSKT_MAGIC)
    omega_spec, off = _spec_from(buf, off)
    psi_spec, off = _spec_from(buf, off)
    if len(buf) < off + _SIZES.size:
        raise FormatError("truncated QSKT1 size record")
    r, s, l = _SIZES.unpack_from(buf, off)
    off += _SIZES.size
    Y, off = read_qmat_record(buf, off)
    W, off = read_qmat_record(buf, off)
    if off != len(buf):
        raise FormatError("unexpected trailing bytes in QSKT1 file")
    m, n = Y.rows, W.cols
    if (
        Y.cols != s
        or W.rows != l
        or omega_spec.rows != n
        or omega_spec.cols != s
        or psi_spec.rows != l
        or psi_spec.cols != m
    ):
        raise FormatError("QSKT1 records have inconsistent dimensions")
    _check_sizes(m, n, r, s, l)
    return SketchState(Y, W, omega_spec, psi_spec, r, s, l)


def save_checkpoint(path, state: SketchState) -> None:
    with open(os.fspath(path), "wb") as fh:
        fh.write(checkpoint_to_bytes(state))


def load_checkpoint(path) -> SketchState:
    with open(os.fspath(path), "rb") as fh:
        return checkpoint_from_bytes(fh.read())
