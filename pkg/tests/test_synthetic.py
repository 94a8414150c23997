import numpy as np
import pytest

from qlra.analysis import spectrum_tail
from qlra.errors import ParameterError, ShapeError
from qlra.factorizations import singular_values
from qlra.quaternion import QMatrix
from qlra.sketching import one_pass_approx
from qlra.synthetic import (
    ExpDecay,
    LowRankPlusNoise,
    PolyDecay,
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


def test_pds_values():
    sigma = planted_sigma(SpectrumSpec(PolyDecay(2.0), 6, 4, 2))
    np.testing.assert_allclose(sigma, [1, 1, 0.25, 1 / 9], rtol=1e-15)


def test_eds_values():
    sigma = planted_sigma(SpectrumSpec(ExpDecay(0.25), 5, 3, 1))
    np.testing.assert_allclose(sigma, [1, 10**-0.25, 10**-0.5], rtol=1e-15)


def test_lowrank_values():
    np.testing.assert_array_equal(planted_sigma(SpectrumSpec(LowRankPlusNoise(0.1), 5, 4, 3)), [1, 1, 1, 0])


def test_pds_tail_energy():
    spec = SpectrumSpec(PolyDecay(2.0), 60, 50, 10)
    k = np.arange(2, 42)
    assert spectrum_tail(planted_sigma(spec), 10).tail_fro ** 2 == pytest.approx(np.sum(k**-4.0), rel=1e-13)


def test_spec_validation():
    with pytest.raises(ParameterError):
        SpectrumSpec(PolyDecay(2.0), 10, 5, 6)
    with pytest.raises(ParameterError):
        SpectrumSpec(PolyDecay(0.0), 10, 5, 2)
    with pytest.raises(ParameterError):
        SpectrumSpec(ExpDecay(1.0), 4, 5, 2)
    with pytest.raises(ParameterError):
        SpectrumSpec("pds", 10, 5, 2)


def test_parse_spectrum():
    assert parse_spectrum("pds:2") == PolyDecay(2.0)
    assert parse_spectrum("eds:0.25") == ExpDecay(0.25)
    assert parse_spectrum("lowrank:0.01") == LowRankPlusNoise(0.01)
    for bad in ("pds", "cauchy:1", ""):
        with pytest.raises(ParameterError):
            parse_spectrum(bad)


@pytest.mark.parametrize("kind", [PolyDecay(2.0), ExpDecay(0.25)])
def test_synth_factors_reconstruct(kind):
    A, truth = synth_matrix(SpectrumSpec(kind, 60, 40, 5, seed=1))
    assert (A - truth.reconstruct()).fro_norm() <= 1e-10 * A.fro_norm()
    assert (truth.U.H @ truth.U - QMatrix.eye(40)).fro_norm() < 1e-10
    assert (truth.V.H @ truth.V - QMatrix.eye(40)).fro_norm() < 1e-10


def test_singular_values_recovered():
    A, truth = synth_matrix(SpectrumSpec(ExpDecay(0.25), 60, 40, 5, seed=3))
    sigma = truth.sigma
    keep = sigma >= sigma[0] * 1e-10
    np.testing.assert_allclose(singular_values(A)[keep], sigma[keep], rtol=1e-8)


def test_synth_is_deterministic():
    spec = SpectrumSpec(LowRankPlusNoise(0.01), 30, 20, 4, seed=9)
    A1, _ = synth_matrix(spec)
    A2, _ = synth_matrix(spec)
    assert A1.array_equal(A2)


def test_lowrank_noise_level():
    spec = SpectrumSpec(LowRankPlusNoise(0.5), 50, 40, 4, seed=2)
    A, truth = synth_matrix(spec)
    noise = (A - truth.reconstruct()).fro_norm()
    # ||(xi/n) U E V*||_F = (xi/n) ||E||_F with E[||E||^2] = 4 n^2
    assert noise == pytest.approx(0.5 * 2.0, rel=0.1)


def test_image_round_trip(rng):
    px = rng.random((5, 7, 3))
    Q = image_to_qmatrix(px)
    assert np.all(Q.w == 0)
    back, clamped = qmatrix_to_image(Q)
    np.testing.assert_array_equal(back, px)
    assert clamped == 0


def test_black_image_is_zero():
    assert image_to_qmatrix(np.zeros((3, 4, 3))).array_equal(QMatrix.zeros(3, 4))


def test_clamp_count():
    Q = QMatrix.from_planes(np.zeros((1, 2)), [[1.5, 0.2]], [[-0.1, 0.3]], [[0.5, 0.5]])
    px, clamped = qmatrix_to_image(Q)
    assert clamped == 2
    assert px.min() == 0.0 and px.max() == 1.0


def test_image_shape_checked():
    with pytest.raises(ShapeError):
        image_to_qmatrix(np.zeros((3, 4, 4)))
    with pytest.raises(ShapeError):
        image_to_qmatrix(np.zeros((3, 4)))


def test_psnr():
    a = np.zeros((4, 4, 3), np.uint8)
    assert psnr(a, a) == np.inf
    b = a.copy()
    b[0, 0, 0] = 255
    assert psnr(a, b) == pytest.approx(10 * np.log10(48), rel=1e-12)
    with pytest.raises(ShapeError):
        psnr(a, a[:2])


def test_quantize():
    np.testing.assert_array_equal(quantize([0.0, 1.0, 0.5, 1.2, -0.3]), [0, 255, 128, 255, 0])


def test_rank_one_image_compresses(rng):
    u = rng.random((40, 1))
    v = rng.random((30, 1))
    color = np.array([0.9, 0.5, 0.2])
    px = (u @ v.T)[:, :, None] * color
    Q = image_to_qmatrix(px)
    res = one_pass_approx(Q, 1, 3, 6)
    assert res.diagnostics["relative_error"] <= 1e-8


def test_image_file_round_trip(rng, tmp_path):
    px = quantize(rng.random((6, 5, 3))) / 255.0
    save_image(tmp_path / "x.png", px)
    np.testing.assert_array_equal(load_image(tmp_path / "x.png"), px)
