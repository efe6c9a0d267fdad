import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from dcthisto import frequency as F
from dcthisto.errors import ContractError, DimensionError
from dcthisto.frequency import LowPassConfig, Spectrum2D
from dcthisto.tensor import GradTape, Tensor, sum_all


def spec(x):
    return Spectrum2D(Tensor(np.asarray(x, dtype=float)))


# -- 1-D ---------------------------------------------------------------------


def test_dct1d_constant():
    assert np.allclose(F.dct1d([1, 1, 1, 1]).coeffs, [4, 0, 0, 0], atol=1e-15)


def test_dct1d_impulse():
    expected = [1, math.cos(math.pi / 8), math.cos(math.pi / 4), math.cos(3 * math.pi / 8)]
    assert np.allclose(F.dct1d([1, 0, 0, 0]).coeffs, expected, atol=1e-15)


def test_dct1d_vs_naive(nprng):
    x = nprng.normal(size=16)
    assert np.allclose(F.dct1d(x).coeffs, oracles.dct1d_raw(x), rtol=0, atol=1e-12)


def test_dct1d_empty_is_dimension_error():
    with pytest.raises(DimensionError):
        F.dct1d([])


@pytest.mark.parametrize("convention", ["raw", "orthonormal"])
def test_idct1d_round_trip(convention, nprng):
    x = nprng.normal(size=11)
    assert np.allclose(F.idct1d(F.dct1d(x, convention)), x, atol=1e-12)


@pytest.mark.parametrize("n", [2, 4, 8, 16, 32])
def test_orthonormal_matrix(n):
    d = F.dct_matrix(n)
    assert np.abs(d @ d.T - np.eye(n)).max() < 1e-10


# -- 2-D ---------------------------------------------------------------------


def test_dct2d_constant_image():
    c, m, n = 2.5, 4, 6
    out = F.dct2d(np.full((1, m, n), c)).numpy()
    expected = np.zeros((1, m, n))
    expected[0, 0, 0] = c * math.sqrt(m * n)
    assert np.allclose(out, expected, atol=1e-12)


def test_dct2d_single_pixel():
    assert F.dct2d(np.array([[[3.25]]])).numpy().item() == pytest.approx(3.25, abs=1e-15)


def test_dct2d_vs_four_loops(nprng):
    x = nprng.normal(size=(8, 8))
    assert np.abs(F.dct2d(x).numpy() - oracles.dct2d_loops(x)).max() < 1e-10


def test_dct2d_vs_direct_sum_rectangular(nprng):
    x = nprng.normal(size=(3, 5, 12))
    assert np.abs(F.dct2d(x).numpy() - oracles.dct2d_direct(x)).max() < 1e-10


def test_idct2d_round_trip(nprng):
    x = nprng.normal(size=(3, 16, 16))
    assert np.abs(F.idct2d(F.dct2d(x)).data - x).max() < 1e-10


def test_raw_convention_round_trip(nprng):
    x = nprng.normal(size=(2, 5, 7))
    s = F.dct2d(x, "raw")
    assert s.convention == "raw"
    assert np.abs(F.idct2d(s).data - x).max() < 1e-10


def test_idct2d_zero_and_dc():
    assert np.array_equal(F.idct2d(spec(np.zeros((2, 4, 4)))).data, np.zeros((2, 4, 4)))
    s = np.zeros((1, 4, 9))
    s[0, 0, 0] = 6.0
    assert np.allclose(F.idct2d(spec(s)).data, 1.0, atol=1e-12)


def test_idct2d_convention_mismatch():
    with pytest.raises(ContractError):
        F.idct2d(F.dct2d(np.zeros((2, 2))), convention="raw")


@given(
    arrays(np.float64, (2, 6, 5), elements=st.floats(-10, 10)),
    arrays(np.float64, (2, 6, 5), elements=st.floats(-10, 10)),
    st.floats(-3, 3),
    st.floats(-3, 3),
)
def test_dct2d_linear(x, y, a, b):
    lhs = F.dct2d(a * x + b * y).numpy()
    rhs = a * F.dct2d(x).numpy() + b * F.dct2d(y).numpy()
    assert np.abs(lhs - rhs).max() < 1e-10


def test_identity_gradient_of_round_trip(nprng):
    x = Tensor(nprng.normal(size=(2, 4, 6)))
    w = nprng.normal(size=(2, 4, 6))
    with GradTape() as tape:
        y = F.idct2d(F.dct2d(x))
        loss = sum_all(y * Tensor(w))
    (g,) = tape.gradient(loss, [x])
    assert np.abs(g - w).max() < 1e-10


# -- low-pass and padding ------------------------------------------------------


def test_lowpass_r1_identity(nprng):
    s = spec(nprng.normal(size=(2, 4, 4)))
    assert np.array_equal(F.lowpass_crop(s, 1).numpy(), s.numpy())


def test_lowpass_crop_top_left(nprng):
    x = nprng.normal(size=(1, 4, 4))
    assert np.array_equal(F.lowpass_crop(spec(x), LowPassConfig(2)).numpy(), x[:, :2, :2])


def test_lowpass_non_divisible_names_dims():
    with pytest.raises(DimensionError, match=r"r=3.*M=4.*N=6"):
        F.lowpass_crop(spec(np.zeros((1, 4, 6))), 3)


def test_retained_energy_fraction(nprng):
    img = nprng.normal(size=(3, 8, 8))
    coeffs = oracles.dct2d_direct(img)
    expected = np.sum(coeffs[:, :4, :4] ** 2) / np.sum(coeffs**2)
    assert F.retained_energy_fraction(img, 2) == pytest.approx(expected, abs=1e-12)


@given(arrays(np.float64, (2, 16, 16), elements=st.floats(-5, 5)))
def test_retained_energy_non_increasing_in_r(img):
    fracs = [F.retained_energy_fraction(img, r) for r in (1, 2, 4, 8, 16)]
    assert all(a >= b - 1e-12 for a, b in zip(fracs, fracs[1:]))


def test_pad_to_own_size_identity(nprng):
    s = spec(nprng.normal(size=(2, 3, 5)))
    assert np.array_equal(F.freq_zero_pad(s, (3, 5)).numpy(), s.numpy())


def test_crop_then_pad_zeroes_high_quadrants(nprng):
    x = nprng.normal(size=(2, 6, 8))
    out = F.freq_zero_pad(F.lowpass_crop(spec(x), 2), (6, 8)).numpy()
    expected = np.zeros_like(x)
    expected[:, :3, :4] = x[:, :3, :4]
    assert np.array_equal(out, expected)


def test_pad_smaller_target_rejected():
    with pytest.raises(DimensionError):
        F.freq_zero_pad(spec(np.zeros((1, 4, 4))), (2, 4))


@pytest.mark.parametrize("r", [1, 2, 4])
def test_parseval_after_crop_pad_idct(r, nprng):
    img = nprng.normal(size=(3, 16, 16))
    coeffs = oracles.dct2d_direct(img)
    kept = np.sum(coeffs[:, : 16 // r, : 16 // r] ** 2)
    filtered = F.idct2d(F.freq_zero_pad(F.lowpass_crop(F.dct2d(img), r), (16, 16))).data
    assert abs(np.sum(filtered**2) - kept) < 1e-9


def test_spectral_resize_mixed():
    x = np.arange(24.0).reshape(1, 4, 6)
    out = F.spectral_resize(spec(x), (6, 3)).numpy()
    assert out.shape == (1, 6, 3)
    assert np.array_equal(out[:, :4, :], x[:, :, :3])
    assert not out[:, 4:, :].any()


# -- DC normalization ----------------------------------------------------------


def test_dc_normalize_dc_to_one():
    m, n = 4, 9
    s = np.zeros((2, m, n))
    s[:, 0, 0] = math.sqrt(m * n)
    out = F.dc_normalize(spec(s), np.ones(2), np.zeros(2)).numpy()
    assert np.allclose(out[:, 0, 0], 1.0, atol=1e-15)
    assert not out.reshape(2, -1)[:, 1:].any()


def test_dc_normalize_gamma_two_doubles(nprng):
    x = nprng.normal(size=(3, 4, 4))
    one = F.dc_normalize(spec(x), np.ones(3), np.zeros(3)).numpy()
    two = F.dc_normalize(spec(x), np.full(3, 2.0), np.zeros(3)).numpy()
    assert np.allclose(two, 2 * one, atol=1e-15)


def test_dc_normalize_hand_inverse(nprng):
    x = nprng.normal(size=(3, 4, 5))
    gamma, beta = nprng.uniform(0.5, 2, 3), nprng.normal(size=3)
    y = F.dc_normalize(spec(x), gamma, beta).numpy()
    back = (y - beta[:, None, None]) / gamma[:, None, None]
    back[:, 0, 0] *= math.sqrt(20)
    assert np.abs(back - x).max() < 1e-12
    lib = F.dc_denormalize(spec(y), gamma, beta).numpy()
    assert np.abs(lib - x).max() < 1e-12


def test_dc_normalize_zero_gamma_warns():
    with pytest.warns(RuntimeWarning):
        F.dc_normalize(spec(np.ones((2, 2, 2))), np.array([1.0, 0.0]), np.zeros(2))


def test_dc_normalize_channel_mismatch():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(DimensionError):
            F.dc_normalize(spec(np.ones((2, 2, 2))), np.ones(3), np.zeros(3))
