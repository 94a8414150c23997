"""Test matrices with planted spectra, and RGB images as pure quaternion matrices.

``synth_matrix`` returns ``A = U diag(sigma) V*`` together with its factors.
``U`` (``m x n``) and ``V`` (``n x n``) are orthonormalized quaternion
Gaussian matrices.  The three spectrum kinds are

* ``PolyDecay(p)``: ``R`` ones followed by ``2^-p, 3^-p, ...``;
* ``ExpDecay(q)``: ``R`` ones followed by ``10^-q, 10^-2q, ...``;
* ``LowRankPlusNoise(xi)``: ``U diag(1, .., 1, 0, .., 0) V* + (xi / n) U E V*``
  with ``E`` quaternion Gaussian.  The returned factors describe the
  noiseless part only.

An image with channels ``(r, g, b)`` is stored as ``r i + g j + b k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .factorizations import LapackBackend, QsvdFactors, qsvd, use_backend
from .quaternion import QMatrix
from .rangefinders import pseudo_svd
from .rng import check_seed, stream
from .sketching import random_qmatrix

__all__ = [
    "LowRankPlusNoise",
    "PolyDecay",
    "ExpDecay",
    "SpectrumSpec",
    "parse_spectrum",
    "planted_sigma",
    "synth_matrix",
    "image_to_qmatrix",
    "qmatrix_to_image",
    "load_image",
    "save_image",
    "quantize",
    "psnr",
]


@dataclass(frozen=True)
class LowRankPlusNoise:
    xi: float
    name = "lowrank"


@dataclass(frozen=True)
class PolyDecay:
    p: float
    name = "pds"


@dataclass(frozen=True)
class ExpDecay:
    q: float
    name = "eds"


_KINDS = {"lowrank": LowRankPlusNoise, "pds": PolyDecay, "eds": ExpDecay}


def parse_spectrum(text: str):
    """Parse ``"pds:2"``, ``"eds:0.25"`` or ``"lowrank:0.01"``."""
    name, _, value = text.partition(":")
    if name not in _KINDS or not value:
        raise ParameterError(f"spectrum must look like pds:P, eds:Q or lowrank:XI, got {text!r}")
    return _KINDS[name](float(value))


def _param(kind) -> float:
    return kind.xi if isinstance(kind, LowRankPlusNoise) else kind.p if isinstance(kind, PolyDecay) else kind.q


@dataclass(frozen=True)
class SpectrumSpec:
    kind: object
    m: int
    n: int
    R: int
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.kind, (LowRankPlusNoise, PolyDecay, ExpDecay)):
            raise ParameterError(f"unknown spectrum kind {self.kind!r}")
        if not _param(self.kind) > 0:
            raise ParameterError(f"spectrum parameter must be positive, got {_param(self.kind)}")
        if not 0 <= self.R <= self.n:
            raise ParameterError(f"need 0 <= R <= n, got R={self.R}, n={self.n}")
        if not 1 <= self.n <= self.m:
            raise ParameterError(f"need 1 <= n <= m, got m={self.m}, n={self.n}")
        object.__setattr__(self, "seed", check_seed(self.seed))


def planted_sigma(spec: SpectrumSpec) -> np.ndarray:
    """The ``n`` planted singular values (for low rank plus noise, of the noiseless part)."""
    k = np.arange(1, spec.n - spec.R + 1, dtype=np.float64)
    kind = spec.kind
    if isinstance(kind, PolyDecay):
        tail = (k + 1.0) ** (-kind.p)
    elif isinstance(kind, ExpDecay):
        tail = 10.0 ** (-kind.q * k)
    else:
        tail = np.zeros(len(k))
    return np.concatenate([np.ones(spec.R), tail])


def _orthonormal(g, rows: int, cols: int) -> QMatrix:
    G = random_qmatrix(g, rows, cols)
    if rows > cols:
        return pseudo_svd(G).H
    return qsvd(G).U


def synth_matrix(spec: SpectrumSpec):
    """Return ``(A, truth)`` with ``truth`` the planted :class:`QsvdFactors`."""
    # any orthonormal factors will do here, so use the faster SVD driver
    with use_backend(LapackBackend("gesdd")):
        U = _orthonormal(stream(spec.seed, 4, 0), spec.m, spec.n)
        V = _orthonormal(stream(spec.seed, 4, 1), spec.n, spec.n)
    sigma = planted_sigma(spec)
    truth = QsvdFactors(U, sigma, V)
    A = truth.reconstruct()
    if isinstance(spec.kind, LowRankPlusNoise):
        E = random_qmatrix(stream(spec.seed, 4, 2), spec.n, spec.n)
        A = A + U @ (E * (spec.kind.xi / spec.n)) @ V.H
    return A, truth


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------


def image_to_qmatrix(pixels) -> QMatrix:
    """``m x n x 3`` array of values in ``[0, 1]`` to a pure quaternion matrix."""
    px = np.asarray(pixels, dtype=np.float64)
    if px.ndim != 3 or px.shape[2] != 3:
        raise ShapeError(f"expected an m x n x 3 image, got shape {px.shape}")
    planes = np.zeros((4, px.shape[0], px.shape[1]))
    planes[1:] = np.moveaxis(px, 2, 0)
    return QMatrix(planes)


def qmatrix_to_image(Q: QMatrix):
    """Inverse of :func:`image_to_qmatrix`; returns ``(pixels, clamp_count)``.

    The real plane is dropped and values are clamped to ``[0, 1]``;
    ``clamp_count`` is the number of channel values that had to be clamped.
    """
    px = np.moveaxis(Q.data[1:], 0, 2)
    clamped = int(np.count_nonzero((px < 0.0) | (px > 1.0)))
    return np.clip(px, 0.0, 1.0), clamped


def quantize(pixels) -> np.ndarray:
    """Values in ``[0, 1]`` to 8-bit integers."""
    return np.rint(np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def psnr(reference, test) -> float:
    """Peak signal-to-noise ratio in dB of two 8-bit images (peak 255)."""
    ref = np.asarray(reference, dtype=np.float64)
    out = np.asarray(test, dtype=np.float64)
    if ref.shape != out.shape:
        raise ShapeError(f"image shapes differ: {ref.shape} vs {out.shape}")
    mse = float(np.mean((ref - out) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / mse)


def load_image(path) -> np.ndarray:
    """Read an RGB raster file as an ``m x n x 3`` float array in ``[0, 1]``."""
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def save_image(path, pixels) -> None:
    """Write ``m x n x 3`` values in ``[0, 1]`` as an 8-bit RGB file (format from the suffix)."""
    from PIL import Image

    Image.fromarray(quantize(pixels)).save(path)
