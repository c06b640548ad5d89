import numpy as np
import pytest

from bfno import spectral
from bfno.tensor import Prng


def _rand(shape, seed):
    return np.random.default_rng(seed).standard_normal(shape)


# ---------------------------------------------------------------- naive DFT


def test_dft_naive_delta():
    assert np.allclose(spectral.dft_naive([1, 0, 0, 0]), [1, 1, 1, 1])


def test_dft_naive_constant():
    c = 2.5
    assert np.allclose(spectral.dft_naive([c, c, c, c]), [4 * c, 0, 0, 0], atol=1e-12)


def test_dft_naive_known_values():
    # evaluating the DFT sum by hand for [1, 2, 3, 4]
    expect = np.array([10, -2 + 2j, -2, -2 - 2j])
    assert np.allclose(spectral.dft_naive([1, 2, 3, 4]), expect, atol=1e-12)


# ---------------------------------------------------------------- 1-D fast path


def test_rfft_delta():
    spec = spectral.rfft_1d(np.array([1.0, 0.0, 0.0, 0.0]))
    assert np.allclose(spec, [1, 1, 1], atol=1e-12)


@pytest.mark.parametrize("n", [1, 2, 4, 8, 16, 32, 64, 128, 256])
def test_rfft_matches_naive(n):
    x = _rand(n, n)
    fast = spectral.rfft_1d(x)
    oracle = spectral.dft_naive(x)[: n // 2 + 1]
    assert np.abs(fast - oracle).max() < 1e-10


@pytest.mark.parametrize("n", [1, 2, 4, 8, 64, 256])
def test_rfft_roundtrip(n):
    x = _rand(n, 100 + n)
    back = spectral.irfft_1d(spectral.rfft_1d(x), n)
    assert np.abs(back - x).max() < 1e-12


def test_irfft_known_bins():
    assert np.allclose(spectral.irfft_1d(np.array([1, 1, 1], dtype=complex), 4), [1, 0, 0, 0], atol=1e-12)
    c = 0.75
    assert np.allclose(spectral.irfft_1d(np.array([4 * c, 0, 0], dtype=complex), 4), [c, c, c, c], atol=1e-12)


def test_non_power_of_two_rejected():
    with pytest.raises(spectral.SpectralExtentError, match="12"):
        spectral.rfft_1d(np.zeros(12))


def test_irfft_bin_count_mismatch():
    with pytest.raises(ValueError):
        spectral.irfft_1d(np.zeros(4, dtype=complex), 4)


def test_fft_complex_matches_naive():
    z = _rand(16, 1) + 1j * _rand(16, 2)
    assert np.abs(spectral.fft_complex(z) - spectral.dft_naive(z)).max() < 1e-10


def test_ifft_complex_roundtrip():
    z = _rand(32, 3) + 1j * _rand(32, 4)
    assert np.abs(spectral.ifft_complex(spectral.fft_complex(z)) - z).max() < 1e-12


# ---------------------------------------------------------------- 2-D


def test_rfft2_delta():
    img = np.zeros((4, 4))
    img[0, 0] = 1.0
    assert np.allclose(spectral.rfft_2d(img), np.ones((4, 3)), atol=1e-12)


def test_rfft2_constant():
    img = np.full((4, 4), 0.5)
    spec = spectral.rfft_2d(img)
    expect = np.zeros((4, 3), dtype=complex)
    expect[0, 0] = 16 * 0.5
    assert np.abs(spec - expect).max() < 1e-12


@pytest.mark.parametrize("h,w", [(1, 4), (2, 2), (4, 8), (8, 8), (16, 4), (32, 32)])
def test_rfft2_matches_nested_naive(h, w):
    img = _rand((h, w), h * 100 + w)
    fast = spectral.rfft_2d(img)
    oracle = spectral.dft_naive_2d(img)[:, : w // 2 + 1]
    assert np.abs(fast - oracle).max() < 1e-10


@pytest.mark.parametrize("h,w", [(1, 1), (2, 4), (8, 8), (16, 32)])
def test_rfft2_roundtrip(h, w):
    img = _rand((h, w), h * 7 + w)
    back = spectral.irfft_2d(spectral.rfft_2d(img), h, w)
    assert np.abs(back - img).max() < 1e-12


def test_rfft2_batched_axes():
    batch = _rand((3, 5, 8, 16), 99)
    spec = spectral.rfft_2d(batch)
    assert spec.shape == (3, 5, 8, 9)
    single = spectral.rfft_2d(batch[1, 4])
    assert np.abs(spec[1, 4] - single).max() < 1e-12


# ---------------------------------------------------------------- properties


def test_parseval_all_sizes():
    for n in [1, 2, 4, 8, 16, 32, 64, 128, 256]:
        x = _rand(n, n + 1)
        spec = spectral.rfft_1d(x)
        full = spectral.hermitian_mirror_1d(spec, n)
        energy_time = np.sum(x**2)
        energy_freq = np.sum(np.abs(full) ** 2) / n
        assert abs(energy_time - energy_freq) < 1e-9


def test_linearity():
    rng = np.random.default_rng(5)
    for n in (8, 64):
        x, y = rng.standard_normal(n), rng.standard_normal(n)
        a, b = 1.7, -0.3
        lhs = spectral.rfft_1d(a * x + b * y)
        rhs = a * spectral.rfft_1d(x) + b * spectral.rfft_1d(y)
        assert np.abs(lhs - rhs).max() < 1e-11


def _circular_conv_1d(x, k):
    n = len(x)
    out = np.zeros(n)
    for i in range(n):
        for j in range(n):
            out[i] += x[j] * k[(i - j) % n]
    return out


def test_convolution_theorem_1d():
    rng = np.random.default_rng(8)
    for n in (8, 32):
        x, k = rng.standard_normal(n), rng.standard_normal(n)
        via_fft = spectral.irfft_1d(spectral.rfft_1d(x) * spectral.rfft_1d(k), n)
        direct = _circular_conv_1d(x, k)
        assert np.abs(via_fft - direct).max() < 1e-9


def test_hermitian_mirror_2d_matches_full_dft():
    img = _rand((8, 8), 17)
    full = spectral.hermitian_mirror_2d(spectral.rfft_2d(img), 8, 8)
    oracle = spectral.dft_naive_2d(img)
    assert np.abs(full - oracle).max() < 1e-10


def test_hermitianize_special_columns_projects():
    rng = np.random.default_rng(21)
    raw = rng.standard_normal((4, 8, 5)) + 1j * rng.standard_normal((4, 8, 5))
    fixed = spectral.hermitianize_special_columns(raw)
    # middles untouched
    assert np.abs(fixed[..., 1:4] - raw[..., 1:4]).max() == 0.0
    # fixed columns are Hermitian along H, self-conjugate bins real
    for c in (0, 4):
        col = fixed[..., c]
        flipped = np.roll(col[..., ::-1], 1, axis=-1)
        assert np.abs(col - np.conj(flipped)).max() < 1e-14
    # projection is idempotent
    again = spectral.hermitianize_special_columns(fixed)
    assert np.abs(again - fixed).max() < 1e-14


def test_irfft2_ignores_anti_hermitian_content():
    # inverse of a projected spectrum equals inverse of the raw one
    rng = np.random.default_rng(33)
    raw = rng.standard_normal((8, 5)) + 1j * rng.standard_normal((8, 5))
    a = spectral.irfft_2d(raw, 8, 8)
    b = spectral.irfft_2d(spectral.hermitianize_special_columns(raw), 8, 8)
    assert np.abs(a - b).max() < 1e-12


def test_prng_and_numpy_inputs_interchangeable():
    x = Prng(3).uniform(-1, 1, (16,))
    assert np.abs(spectral.irfft_1d(spectral.rfft_1d(x), 16) - x).max() < 1e-12
