"""Frequency-domain attention branch.

Each spatial frequency position of the low-passed spectrum becomes one token
whose embedding is its channel vector, so a map of ``m x n`` retained
coefficients yields ``L = m * n`` tokens. Attention is cascaded group
attention: channels are split across heads and every head after the first
also receives the previous head's output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, NumericError
from .frequency import (
    LowPassConfig,
    Spectrum2D,
    dc_normalize,
    dct2d,
    idct2d,
    lowpass_crop,
    spectral_resize,
)
from .rng import RngState
from .tensor import (
    Tensor,
    add,
    as_tensor,
    concat,
    current_tape,
    matmul,
    reshape,
    scale,
    slice_axis,
    softmax,
    swap_last,
)

# above this many score entries per head, no-grad inference runs row-chunked
_CHUNK_THRESHOLD = 4096 * 4096
_CHUNK_ROWS = 1024


@dataclass(frozen=True)
class CgaConfig:
    channels: int
    heads: int = 1
    key_dim: int | None = None
    out_channels: int | None = None

    def __post_init__(self):
        if self.channels < 1 or self.heads < 1:
            raise ConfigError(f"channels and heads must be positive, got C={self.channels}, h={self.heads}")
        if self.channels % self.heads:
            raise ConfigError(f"heads h={self.heads} must divide channels C={self.channels}")
        if self.key_dim is not None and self.key_dim < 1:
            raise ConfigError(f"key_dim must be positive, got {self.key_dim}")
        if self.out_channels is not None and self.out_channels < 1:
            raise ConfigError(f"out_channels must be positive, got {self.out_channels}")

    @property
    def split(self) -> int:
        return self.channels // self.heads

    @property
    def d_k(self) -> int:
        return self.key_dim if self.key_dim is not None else self.split

    @property
    def d_v(self) -> int:
        return self.split

    @property
    def c_out(self) -> int:
        return self.out_channels if self.out_channels is not None else self.channels


@dataclass(frozen=True)
class TokenMap:
    """Tokens ``(..., L, C)`` plus the ``(m, n)`` frequency grid they came from."""

    tokens: Tensor
    spatial: tuple[int, int]

    def __post_init__(self):
        m, n = self.spatial
        if self.tokens.shape[-2] != m * n:
            raise DimensionError(f"token count {self.tokens.shape[-2]} != {m}*{n}")

    @property
    def length(self) -> int:
        return self.tokens.shape[-2]

    @property
    def channels(self) -> int:
        return self.tokens.shape[-1]


def tokenize(spec: Spectrum2D | Tensor) -> TokenMap:
    """Row-major flatten of the frequency grid: position (u, v) -> token u*n + v."""
    x = spec.coeffs if isinstance(spec, Spectrum2D) else as_tensor(spec)
    *lead, c, m, n = x.shape
    flat = reshape(x, (*lead, c, m * n))
    return TokenMap(swap_last(flat), (m, n))


def untokenize(tm: TokenMap) -> Tensor:
    *lead, _, c = tm.tokens.shape
    return reshape(swap_last(tm.tokens), (*lead, c, *tm.spatial))


def _chunked_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, factor: float) -> np.ndarray:
    out = np.empty(q.shape[:-1] + (v.shape[-1],))
    kt = np.swapaxes(k, -1, -2)
    for start in range(0, q.shape[-2], _CHUNK_ROWS):
        s = (q[..., start : start + _CHUNK_ROWS, :] @ kt) * factor
        s = np.exp(s - s.max(axis=-1, keepdims=True))
        s /= s.sum(axis=-1, keepdims=True)
        out[..., start : start + _CHUNK_ROWS, :] = s @ v
    return out


def attention_head(q, k, v, return_weights: bool = False):
    """``softmax(q k^T / sqrt(d_k)) v`` for ``(..., L, d)`` inputs."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-2] != k.shape[-2] or k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"attention_head: token counts differ q={q.shape} k={k.shape} v={v.shape}")
    factor = 1.0 / math.sqrt(q.shape[-1])
    length = q.shape[-2]
    if not return_weights and current_tape() is None and length * length > _CHUNK_THRESHOLD:
        if not (np.isfinite(q.data).all() and np.isfinite(k.data).all()):
            raise NumericError("attention_head received non-finite queries or keys")
        return Tensor(_chunked_attention(q.data, k.data, v.data, factor))
    weights = softmax(matmul(scale(q, factor), swap_last(k)), axis=-1)
    out = matmul(weights, v)
    if return_weights:
        return out, weights
    return out


def cga_param_shapes(cfg: CgaConfig, prefix: str = "attn") -> dict[str, tuple[int, ...]]:
    shapes = {}
    for i in range(cfg.heads):
        shapes[f"{prefix}.q{i}"] = (cfg.split, cfg.d_k)
        shapes[f"{prefix}.k{i}"] = (cfg.split, cfg.d_k)
        shapes[f"{prefix}.v{i}"] = (cfg.split, cfg.d_v)
    shapes[f"{prefix}.proj"] = (cfg.heads * cfg.d_v, cfg.c_out)
    return shapes


def init_cga_params(cfg: CgaConfig, rng: RngState, prefix: str = "attn", std: float = 0.02) -> dict[str, Tensor]:
    return {
        name: Tensor(rng.truncated_normal(shape, std=std), name=name)
        for name, shape in cga_param_shapes(cfg, prefix).items()
    }


def cascaded_group_attention(
    tm: TokenMap,
    cfg: CgaConfig,
    weights: dict[str, Tensor],
    prefix: str = "attn",
    return_weights: bool = False,
):
    """Cascaded group attention over ``tm``; returns a TokenMap with ``cfg.c_out`` channels.

    With ``return_weights`` the per-head attention matrices are returned too.
    """
    if tm.channels != cfg.channels:
        raise DimensionError(f"token channels {tm.channels} != configured channels {cfg.channels}")
    x = tm.tokens
    g = cfg.split
    prev = None
    outs, maps = [], []
    for i in range(cfg.heads):
        part = x if cfg.heads == 1 else slice_axis(x, -1, i * g, (i + 1) * g)
        if prev is not None:
            part = add(part, prev)
        q = matmul(part, weights[f"{prefix}.q{i}"])
        k = matmul(part, weights[f"{prefix}.k{i}"])
        v = matmul(part, weights[f"{prefix}.v{i}"])
        if return_weights:
            prev, w = attention_head(q, k, v, return_weights=True)
            maps.append(w)
        else:
            prev = attention_head(q, k, v)
        outs.append(prev)
    merged = outs[0] if len(outs) == 1 else concat(outs, axis=-1)
    result = TokenMap(matmul(merged, weights[f"{prefix}.proj"]), tm.spatial)
    if return_weights:
        return result, maps
    return result


def init_branch_params(cfg: CgaConfig, rng: RngState, prefix: str = "attn") -> dict[str, Tensor]:
    params = {
        f"{prefix}.dc_gamma": Tensor(np.ones(cfg.channels), name=f"{prefix}.dc_gamma"),
        f"{prefix}.dc_beta": Tensor(np.zeros(cfg.channels), name=f"{prefix}.dc_beta"),
    }
    params.update(init_cga_params(cfg, rng, prefix))
    return params


def dct_attention_branch(
    x,
    r: int | LowPassConfig,
    cfg: CgaConfig,
    weights: dict[str, Tensor],
    target: tuple[int, int] | None = None,
    prefix: str = "attn",
) -> Tensor:
    """Spatial map ``(..., C_out, M', N')`` from the frequency-attention pipeline.

    dct2d -> dc_normalize -> lowpass_crop(r) -> tokens -> cascaded group
    attention -> coefficient grid -> zero-pad (or crop) to ``target`` -> idct2d.
    ``target`` defaults to the cropped size.
    """
    x = as_tensor(x)
    spec = dct2d(x)
    spec = dc_normalize(spec, weights[f"{prefix}.dc_gamma"], weights[f"{prefix}.dc_beta"])
    spec = lowpass_crop(spec, r)
    tm = cascaded_group_attention(tokenize(spec), cfg, weights, prefix)
    out = Spectrum2D(untokenize(tm), spec.convention)
    if target is not None:
        out = spectral_resize(out, target)
    return idct2d(out)
