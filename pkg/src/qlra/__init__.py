"""Randomized low-rank approximation of quaternion matrices."""

from .errors import (
    FormatError,
    ParameterError,
    PreconditionError,
    RankDeficientError,
    ShapeError,
    SingularMatrixError,
)
from .quaternion import Quaternion, QMatrix, qmat_adjoint, qmat_fro_norm, qmat_mul
from .complex_bridge import (
    QuaternionLU,
    SymplecticContext,
    from_compact,
    from_full,
    solve_quaternion_linear,
    to_compact,
    to_full,
)
from .factorizations import (
    QsvdFactors,
    complex_qr,
    complex_svd,
    condition_number,
    qmat_pinv,
    qsvd,
    singular_values,
    spectral_norm,
)
from .rangefinders import Method, PseudoQrConfig, RangefinderReport, find_range, pseudo_qr, pseudo_svd
from .sketching import (
    ApproxResult,
    EmbeddingKind,
    InMemorySource,
    SketchState,
    TestMatrixSpec,
    gen_test_matrix,
    load_checkpoint,
    make_sketch,
    one_pass_approx,
    qb_stage,
    save_checkpoint,
    sketch_update,
    truncate_stage,
)
from .io import read_qmat, write_qmat
from .runtime import serial_mode
from .analysis import range_distance, relative_error
from .synthetic import ExpDecay, LowRankPlusNoise, PolyDecay, SpectrumSpec, synth_matrix

__version__ = "0.1.0"
