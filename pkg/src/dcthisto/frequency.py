"""DCT-II transforms, low-pass cropping, spectral padding and DC normalization.

Two conventions are supported:

``raw``
    ``X[k] = sum_n x[n] cos(pi/N (n + 1/2) k)`` with no scaling.
``orthonormal``
    The same sum scaled by ``sqrt(1/N)`` for ``k == 0`` and ``sqrt(2/N)``
    otherwise, so the transform matrix is orthogonal and the inverse is the
    transpose. The model pipeline always uses this one.

2-D transforms act on the last two axes of a ``(..., C, M, N)`` array and are
computed separably as ``D_M @ x @ D_N.T``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import Function, Tensor, as_tensor

RAW = "raw"
ORTHONORMAL = "orthonormal"
CONVENTIONS = (RAW, ORTHONORMAL)


def _check_convention(convention: str) -> None:
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown DCT convention {convention!r}; expected one of {CONVENTIONS}")


def alpha(n: int) -> np.ndarray:
    """Per-frequency normalization factors for a length-``n`` transform."""
    a = np.full(n, np.sqrt(2.0 / n))
    a[0] = np.sqrt(1.0 / n)
    return a


@lru_cache(maxsize=64)
def _dct_matrix(n: int, convention: str) -> np.ndarray:
    k = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    m = np.cos(np.pi / n * (j + 0.5) * k)
    if convention == ORTHONORMAL:
        m = alpha(n)[:, None] * m
    m.flags.writeable = False
    return m


def dct_matrix(n: int, convention: str = ORTHONORMAL) -> np.ndarray:
    """``n x n`` matrix ``D`` with ``X = D @ x``. Rows are frequencies."""
    if n < 1:
        raise DimensionError(f"DCT length must be >= 1, got {n}")
    _check_convention(convention)
    return _dct_matrix(n, convention)


@lru_cache(maxsize=64)
def _inverse_matrix(n: int, convention: str) -> np.ndarray:
    d = _dct_matrix(n, ORTHONORMAL)
    if convention == ORTHONORMAL:
        inv = d.T.copy()
    else:
        # raw coefficients are orthonormal ones divided by alpha
        inv = d.T * alpha(n)[None, :]
    inv.flags.writeable = False
    return inv


# ---------------------------------------------------------------------------
# 1-D


@dataclass(frozen=True)
class Spectrum1D:
    coeffs: np.ndarray
    convention: str

    def __len__(self):
        return self.coeffs.shape[0]


def dct1d(x, convention: str = RAW) -> Spectrum1D:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] < 1:
        raise DimensionError(f"dct1d expects a non-empty 1-D signal, got shape {x.shape}")
    return Spectrum1D(dct_matrix(x.shape[0], convention) @ x, convention)


def idct1d(spec: Spectrum1D, convention: str | None = None) -> np.ndarray:
    if convention is not None and convention != spec.convention:
        raise ContractError(f"spectrum is {spec.convention!r}, inverse requested as {convention!r}")
    return _inverse_matrix(len(spec), spec.convention) @ spec.coeffs


# ---------------------------------------------------------------------------
# 2-D differentiable ops


class _Separable2D(Function, register=False):
    """``y = L @ x @ R.T`` over the last two axes; adjoint is ``L.T @ g @ R``."""

    linear = True

    def matrices(self, m: int, n: int) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def forward(self, x):
        if x.ndim < 2:
            raise DimensionError(f"{self.name} needs at least 2 axes, got shape {x.shape}")
        self.left, self.right = self.matrices(x.shape[-2], x.shape[-1])
        return self.left @ x @ self.right.T

    def backward(self, gy):
        return self.left.T @ gy @ self.right


class DCT2D(_Separable2D):
    name = "dct2d"

    def __init__(self, convention: str = ORTHONORMAL):
        _check_convention(convention)
        self.convention = convention

    def matrices(self, m, n):
        return dct_matrix(m, self.convention), dct_matrix(n, self.convention)


class IDCT2D(_Separable2D):
    name = "idct2d"

    def __init__(self, convention: str = ORTHONORMAL):
        _check_convention(convention)
        self.convention = convention

    def matrices(self, m, n):
        return _inverse_matrix(m, self.convention), _inverse_matrix(n, self.convention)


class SpectralCrop(Function):
    """Keep the top-left ``m x n`` corner of the last two axes."""

    name = "lowpass_crop"
    linear = True

    def __init__(self, m: int, n: int):
        self.m, self.n = m, n

    def forward(self, x):
        if self.m > x.shape[-2] or self.n > x.shape[-1]:
            raise DimensionError(f"cannot crop {x.shape[-2:]} to {(self.m, self.n)}")
        self.in_shape = x.shape
        return x[..., : self.m, : self.n].copy()

    def backward(self, gy):
        g = np.zeros(self.in_shape)
        g[..., : self.m, : self.n] = gy
        return g


class SpectralZeroPad(Function):
    """Embed the last two axes in the top-left corner of an ``M x N`` zero map."""

    name = "freq_zero_pad"
    linear = True

    def __init__(self, m: int, n: int):
        self.m, self.n = m, n

    def forward(self, x):
        sm, sn = x.shape[-2:]
        if sm > self.m or sn > self.n:
            raise DimensionError(f"pad target {(self.m, self.n)} is smaller than source {(sm, sn)}")
        self.src = (sm, sn)
        out = np.zeros(x.shape[:-2] + (self.m, self.n))
        out[..., :sm, :sn] = x
        return out

    def backward(self, gy):
        return gy[..., : self.src[0], : self.src[1]].copy()


class DCNormalize(Function):
    """Per-channel affine ``gamma * x' + beta`` where ``x'`` has its DC entry divided by sqrt(M*N).

    Input is ``(..., C, M, N)``; ``gamma`` and ``beta`` have shape ``(C,)``.
    """

    name = "dc_normalize"

    def forward(self, x, gamma, beta):
        c = x.shape[-3] if x.ndim >= 3 else None
        if c is None or gamma.shape != (c,) or beta.shape != (c,):
            raise DimensionError(
                f"dc_normalize: gamma {gamma.shape} / beta {beta.shape} must match channels of {x.shape}"
            )
        m, n = x.shape[-2:]
        self.dc_scale = 1.0 / np.sqrt(m * n)
        xs = x.copy()
        xs[..., 0, 0] *= self.dc_scale
        self.xs, self.gamma = xs, gamma
        return gamma[:, None, None] * xs + beta[:, None, None]

    def backward(self, gy):
        gx = gy * self.gamma[:, None, None]
        gx[..., 0, 0] *= self.dc_scale
        reduce_axes = tuple(range(gy.ndim - 3)) + (-2, -1)
        ggamma = (gy * self.xs).sum(axis=reduce_axes)
        gbeta = gy.sum(axis=reduce_axes)
        return gx, ggamma, gbeta


# ---------------------------------------------------------------------------
# Spectrum2D API


@dataclass(frozen=True)
class Spectrum2D:
    """Coefficient map ``(..., C, M, N)`` tagged with the convention that produced it."""

    coeffs: Tensor
    convention: str = ORTHONORMAL

    @property
    def shape(self) -> tuple[int, ...]:
        return self.coeffs.shape

    @property
    def spatial(self) -> tuple[int, int]:
        return self.coeffs.shape[-2], self.coeffs.shape[-1]

    def numpy(self) -> np.ndarray:
        return self.coeffs.data


@dataclass(frozen=True)
class LowPassConfig:
    r: int = 2

    def __post_init__(self):
        if int(self.r) != self.r or self.r < 1:
            raise ValueError(f"reduction factor r must be a positive integer, got {self.r}")


def dct2d(img, convention: str = ORTHONORMAL) -> Spectrum2D:
    img = as_tensor(img)
    if img.ndim < 2 or min(img.shape[-2:]) < 1:
        raise DimensionError(f"dct2d expects (..., M, N) with M, N >= 1, got {img.shape}")
    return Spectrum2D(DCT2D(convention)(img), convention)


def idct2d(spec: Spectrum2D, convention: str | None = None) -> Tensor:
    if convention is not None and convention != spec.convention:
        raise ContractError(f"spectrum is {spec.convention!r}, inverse requested as {convention!r}")
    return IDCT2D(spec.convention)(spec.coeffs)


def lowpass_crop(spec: Spectrum2D, cfg: LowPassConfig | int) -> Spectrum2D:
    r = cfg.r if isinstance(cfg, LowPassConfig) else int(cfg)
    m, n = spec.spatial
    if r < 1 or m % r or n % r:
        raise DimensionError(f"reduction factor r={r} must divide both spatial dims M={m}, N={n}")
    return Spectrum2D(SpectralCrop(m // r, n // r)(spec.coeffs), spec.convention)


def freq_zero_pad(spec: Spectrum2D, target: tuple[int, int]) -> Spectrum2D:
    return Spectrum2D(SpectralZeroPad(*target)(spec.coeffs), spec.convention)


def spectral_resize(spec: Spectrum2D, target: tuple[int, int]) -> Spectrum2D:
    """Crop or zero-pad each spatial axis so the map becomes ``target``."""
    m, n = spec.spatial
    tm, tn = target
    coeffs = spec.coeffs
    if tm < m or tn < n:
        coeffs = SpectralCrop(min(m, tm), min(n, tn))(coeffs)
    if coeffs.shape[-2:] != (tm, tn):
        coeffs = SpectralZeroPad(tm, tn)(coeffs)
    return Spectrum2D(coeffs, spec.convention)


def dc_normalize(spec: Spectrum2D, gamma, beta) -> Spectrum2D:
    gamma, beta = as_tensor(gamma), as_tensor(beta)
    if np.any(gamma.data == 0.0):
        warnings.warn("dc_normalize: gamma contains zeros; the map is no longer invertible", RuntimeWarning)
    return Spectrum2D(DCNormalize()(spec.coeffs, gamma, beta), spec.convention)


def dc_denormalize(spec: Spectrum2D, gamma, beta) -> Spectrum2D:
    """Exact inverse of :func:`dc_normalize` (not differentiable)."""
    g = np.asarray(as_tensor(gamma).data)[:, None, None]
    b = np.asarray(as_tensor(beta).data)[:, None, None]
    m, n = spec.spatial
    x = (spec.coeffs.data - b) / g
    x[..., 0, 0] *= np.sqrt(m * n)
    return Spectrum2D(Tensor(x), spec.convention)


def retained_energy_fraction(img, r: int) -> float:
    spec = dct2d(img).coeffs.data
    m, n = spec.shape[-2:]
    kept = spec[..., : m // r, : n // r]
    total = float(np.sum(spec**2))
    return float(np.sum(kept**2)) / total if total > 0 else 1.0
