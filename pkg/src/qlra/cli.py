"""Command-line front end: ``qlra <command> ...``.

Commands
--------
synth           write a planted-spectrum test matrix (QMAT1) plus JSON metadata
sketch          sketch a QMAT1 matrix into a QSKT1 checkpoint
update          add a full or row-block update to a checkpoint
approx          one-pass approximation from a matrix or a checkpoint (CSV)
verify          run a Monte Carlo / rangefinder check suite (CSV, exit 1 on failure)
compress-image  stream an RGB image through the sketch and report quality (CSV)

CSV reports go to ``--out`` or standard output; their columns are listed in
:data:`APPROX_COLUMNS`, :data:`IMAGE_COLUMNS` and
:data:`qlra.analysis.REPORT_COLUMNS`.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import math
import os
import sys
import time

import numpy as np

from . import analysis
from .errors import FormatError, ParameterError, PreconditionError, RankDeficientError, ShapeError
from .io import read_qmat, write_qmat
from .quaternion import QMatrix
from .rangefinders import Method, pseudo_qr, pseudo_svd
from .rng import check_seed, stream
from .runtime import apply_thread_env, serial_mode
from .sketching import (
    EmbeddingKind,
    InMemorySource,
    default_sizes,
    load_checkpoint,
    make_sketch,
    one_pass_approx,
    save_checkpoint,
    sketch_update,
)
from .synthetic import (
    SpectrumSpec,
    image_to_qmatrix,
    load_image,
    parse_spectrum,
    planted_sigma,
    psnr,
    qmatrix_to_image,
    quantize,
    save_image,
    synth_matrix,
)

__all__ = ["main", "build_parser", "APPROX_COLUMNS", "IMAGE_COLUMNS", "sketch_seeds"]

_TIME_COLUMNS = ["t_sketch", "t_rangefinder", "t_solve", "t_truncate"]
APPROX_COLUMNS = [
    "rank", "s", "l", "rangefinder", "seed", "relative_error", "qb_residual",
    "kappa_H", "correction_steps", *_TIME_COLUMNS, "status",
]
IMAGE_COLUMNS = [
    "rank", "s", "l", "rangefinder", "seed", "relative_error", "psnr_db", "compression_ratio",
    "clamped", "kappa_H", *_TIME_COLUMNS,
]

_USER_ERRORS = (ParameterError, ShapeError, PreconditionError, FormatError, RankDeficientError, OSError)


def sketch_seeds(seed: int) -> tuple[int, int]:
    """``(omega_seed, psi_seed)`` for a run seed; the two never coincide with other runs' streams."""
    seed = check_seed(seed)
    psi_seed = int(stream(seed, 5).integers(0, 2**63))
    return seed, psi_seed


def _ranks(text: str) -> list[int]:
    try:
        ranks = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"ranks must be integers, got {text!r}") from None
    if not ranks:
        raise argparse.ArgumentTypeError("at least one rank is required")
    return ranks


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


@contextlib.contextmanager
def _report_stream(path):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _write_rows(path, columns, rows):
    with _report_stream(path) as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k)) for k in columns})


def _time_cols(times: dict) -> dict:
    return {f"t_{k}": times.get(k) for k in ("sketch", "rangefinder", "solve", "truncate")}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = SpectrumSpec(parse_spectrum(args.spectrum), args.m, args.n, args.R, args.seed)
    A, _ = synth_matrix(spec)
    write_qmat(args.out, A)
    meta = {
        "spectrum": args.spectrum,
        "m": spec.m,
        "n": spec.n,
        "R": spec.R,
        "seed": spec.seed,
        "sigma": [float(x) for x in planted_sigma(spec)],
    }
    with open(os.path.splitext(args.out)[0] + ".json", "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    return 0


def cmd_sketch(args) -> int:
    A = read_qmat(args.input)
    r, s, l = default_sizes(args.rank[0], args.sketch_s, args.sketch_l)
    om, ps = sketch_seeds(args.seed)
    state = make_sketch(
        InMemorySource(A), r, s, l, om, ps, kind=args.embedding, density=args.density, block_rows=args.block_rows
    )
    save_checkpoint(args.out, state)
    return 0


def cmd_update(args) -> int:
    state = load_checkpoint(args.checkpoint)
    delta = read_qmat(args.delta)
    if args.rows is None:
        state = sketch_update(state, delta)
    else:
        state = sketch_update(state, rows=args.rows, block=delta)
    save_checkpoint(args.out, state)
    return 0


def cmd_approx(args) -> int:
    rows = []
    methods = args.rangefinder or [Method.PSEUDO_SVD.value]
    if args.sketch is not None:
        # only the checkpoint is read; the sketched matrix is never opened
        state = load_checkpoint(args.sketch)
        for r in args.rank:
            for method in methods:
                rows.append(_approx_row(
                    lambda: one_pass_approx(state, r, rangefinder=method), r, state.s, state.l, method,
                    state.omega_spec.seed,
                ))
    else:
        A = read_qmat(args.input)
        for r in args.rank:
            _, s, l = default_sizes(r, args.sketch_s, args.sketch_l)
            for method in methods:
                for trial in range(args.trials):
                    seed = check_seed(args.seed + trial)
                    om, ps = sketch_seeds(seed)
                    rows.append(_approx_row(
                        lambda: one_pass_approx(A, r, s, l, method, om, ps, kind=args.embedding, density=args.density),
                        r, s, l, method, seed,
                    ))
    _write_rows(args.out, APPROX_COLUMNS, rows)
    return 0


def _approx_row(run, r, s, l, method, seed) -> dict:
    """Run one approximation; a rangefinder that rejects the sketch gives a row with status only."""
    row = {"rank": r, "s": s, "l": l, "rangefinder": method, "seed": seed}
    try:
        res = run()
    except RankDeficientError:
        return {**row, "status": "rank-deficient"}
    d = res.diagnostics
    return {
        **row,
        "relative_error": d.get("relative_error"),
        "qb_residual": d.get("qb_residual"),
        "kappa_H": d.get("kappa_H"),
        "correction_steps": d.get("correction_steps", 0),
        **_time_cols(d.get("times", {})),
        "status": "ok",
    }


def _gaussian_bounds_suite(trials: int, seed: int):
    g = stream(seed, 6)

    def rq(m, n):
        return QMatrix(g.standard_normal((4, m, n)))

    reports = []
    for S, T in [(QMatrix.eye(1), QMatrix.eye(1)), (rq(3, 4), rq(5, 2)), (rq(2, 6), rq(6, 3))]:
        reports.append(analysis.mc_check_sgt(S, T, trials, seed))
    for m, n in [(3, 5), (2, 10), (4, 12)]:
        reports.append(analysis.mc_check_pinv_norm(m, n, trials, seed))
    for kind in ("gaussian", "rademacher"):
        reports.extend(analysis.mc_extreme_singvals(400, 10, 50, seed, kind).as_reports())
    return reports


def _rangefinder_suite(kappa: float, trials: int, seed: int):
    """Range preservation, orthonormality and conditioning on planted ``400 x 40`` sketches."""
    tol = 1e-7
    qr_dist, qr_kappa, svd_dist, svd_orth, graded_dist = [], [], [], [], []
    for t in range(trials):
        Y, U = analysis.planted_sketch(400, 40, kappa, seed + t)
        if kappa <= 1e8:
            rep = pseudo_qr(Y)
            qr_dist.append(analysis.range_distance(rep.H, U))
            qr_kappa.append(rep.kappa_after)
        rep = pseudo_svd(Y)
        svd_dist.append(analysis.range_distance(rep.H, U))
        svd_orth.append((rep.H.H @ rep.H - QMatrix.eye(40)).fro_norm())
        Yg, Ug = analysis.planted_sketch(400, 40, kappa, seed + t, graded=True)
        graded_dist.append(analysis.range_distance(pseudo_svd(Yg).H, Ug))

    def worst(metric, limit, values):
        v = np.asarray(values)
        se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
        return analysis.BoundReport(metric, limit, float(v.max()), se, len(v), bool(v.max() <= limit))

    reports = []
    if qr_dist:
        reports.append(worst(f"pseudo-qr range distance kappa={kappa:g}", tol, qr_dist))
        reports.append(worst(f"pseudo-qr kappa(H) kappa={kappa:g}", 10.0, qr_kappa))
    reports.append(worst(f"pseudo-svd range distance kappa={kappa:g}", tol, svd_dist))
    reports.append(worst(f"pseudo-svd graded range distance kappa={kappa:g}", tol, graded_dist))
    reports.append(worst(f"pseudo-svd |H*H-I|_F kappa={kappa:g}", 1e-8, svd_orth))
    return reports


def cmd_verify(args) -> int:
    if args.suite == "gaussian-bounds":
        reports = _gaussian_bounds_suite(args.trials or 500, args.seed)
    else:
        reports = _rangefinder_suite(args.kappa, args.trials or 20, args.seed)
    with _report_stream(args.out) as fh:
        analysis.reports_to_csv(reports, fh)
    return 0 if all(r.passed for r in reports) else 1


def cmd_compress_image(args) -> int:
    pixels = load_image(args.input)
    Q = image_to_qmatrix(pixels)
    m, n = Q.shape
    reference = quantize(pixels)
    method = (args.rangefinder or [Method.PSEUDO_SVD.value])[0]
    om, ps = sketch_seeds(args.seed)
    rows = []
    for r in args.rank:
        _, s, l = default_sizes(r, args.sketch_s, args.sketch_l)
        t0 = time.perf_counter()
        # the image is consumed as a stream of row blocks, one linear update each
        state = make_sketch(
            InMemorySource(Q), r, s, l, om, ps, kind=args.embedding, density=args.density,
            block_rows=args.block_rows,
        )
        t_sketch = time.perf_counter() - t0
        res = one_pass_approx(state, r, rangefinder=method)
        approx = res.reconstruct()
        out, clamped = qmatrix_to_image(approx)
        times = dict(res.diagnostics["times"], sketch=t_sketch)
        na = Q.fro_norm()
        rows.append({
            "rank": r,
            "s": s,
            "l": l,
            "rangefinder": method,
            "seed": args.seed,
            "relative_error": (Q - approx).fro_norm() / na if na else 0.0,
            "psnr_db": psnr(reference, quantize(out)),
            "compression_ratio": 3 * m * n / (r * (4 * m + 4 * n + 1)),
            "clamped": clamped,
            "kappa_H": res.diagnostics["kappa_H"],
            **_time_cols(times),
        })
        if args.image_out:
            path = args.image_out
            if len(args.rank) > 1:
                root, ext = os.path.splitext(path)
                path = f"{root}_r{r}{ext}"
            save_image(path, out)
    _write_rows(args.out, IMAGE_COLUMNS, rows)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _sketch_flags(p, rank_required=True):
    p.add_argument("-r", "--rank", type=_ranks, required=rank_required, help="target rank, or a comma list")
    p.add_argument("--sketch-s", type=int, default=None, help="range sketch size s (default r+5)")
    p.add_argument("--sketch-l", type=int, default=None, help="co-range sketch size l (default 2s)")
    p.add_argument("--embedding", choices=[k.value for k in EmbeddingKind], default="gaussian")
    p.add_argument("--density", type=float, default=None, help="nonzero fraction for sparse embeddings")
    p.add_argument("--block-rows", type=int, default=256, help="rows per streamed block")


def _common_flags(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--serial", action="store_true", help="single-threaded, bit-reproducible execution")


def _rangefinder_flag(p):
    p.add_argument(
        "--rangefinder", action="append", choices=[m.value for m in Method],
        help="rangefinder (repeatable; default pseudo-svd)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qlra", description="One-pass low-rank approximation of quaternion matrices.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a planted-spectrum test matrix")
    p.add_argument("--spectrum", required=True, help="pds:P, eds:Q or lowrank:XI")
    p.add_argument("-m", type=int, required=True)
    p.add_argument("-n", type=int, required=True)
    p.add_argument("-R", type=int, required=True, help="number of leading unit singular values")
    p.add_argument("--out", required=True, help="QMAT1 output; metadata goes next to it as .json")
    _common_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sketch", help="sketch a matrix into a checkpoint")
    p.add_argument("input", help="QMAT1 matrix")
    p.add_argument("--out", required=True, help="QSKT1 checkpoint")
    _sketch_flags(p)
    _common_flags(p)
    p.set_defaults(func=cmd_sketch)

    p = sub.add_parser("update", help="apply a linear update to a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("delta", help="QMAT1 update: full matrix, or a row block with --rows")
    p.add_argument("--rows", type=int, default=None, help="first row touched by a row-block update")
    p.add_argument("--out", required=True)
    _common_flags(p)
    p.set_defaults(func=cmd_update)

    p = sub.add_parser("approx", help="one-pass approximation report")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("input", nargs="?", help="QMAT1 matrix")
    src.add_argument("--sketch", help="QSKT1 checkpoint (the matrix itself is not needed)")
    p.add_argument("--trials", type=int, default=1, help="seeds seed, seed+1, ... per setting")
    p.add_argument("--out", default=None, help="CSV report (default stdout)")
    _sketch_flags(p)
    _rangefinder_flag(p)
    _common_flags(p)
    p.set_defaults(func=cmd_approx)

    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("--suite", required=True, choices=["gaussian-bounds", "rangefinder"])
    p.add_argument("--kappa", type=float, default=1e6, help="planted condition number (rangefinder suite)")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--out", default=None, help="CSV report (default stdout)")
    _common_flags(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("compress-image", help="low-rank compression of an RGB image")
    p.add_argument("input", help="RGB raster image")
    p.add_argument("--image-out", default=None, help="reconstructed image (suffixed _rR for several ranks)")
    p.add_argument("--out", default=None, help="CSV report (default stdout)")
    _sketch_flags(p)
    p.set_defaults(block_rows=64)
    _rangefinder_flag(p)
    _common_flags(p)
    p.set_defaults(func=cmd_compress_image)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    limiter = apply_thread_env()  # noqa: F841  (keeps the thread limit alive)
    try:
        with serial_mode(getattr(args, "serial", False)):
            return args.func(args)
    except _USER_ERRORS as err:
        print(f"qlra {args.command}: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
