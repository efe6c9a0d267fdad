"""Convolutions and the inverted-residual MobileConv branch.

Feature maps are ``(B, C, H, W)``; the public conv functions also accept a
single ``(C, H, W)`` map. Convolutions are computed as a sum over the ``k*k``
kernel taps, each tap being one matrix product over channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .rng import RngState
from .tensor import Function, Tensor, add, as_tensor, relu6, reshape


def conv_out_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _tap(xp: np.ndarray, i: int, j: int, stride: int, ho: int, wo: int) -> np.ndarray:
    return xp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride]


def _check_kernel(k: int, padding: int | None) -> int:
    if k < 1 or k % 2 == 0:
        raise DimensionError(f"kernel size must be odd, got {k}")
    return (k - 1) // 2 if padding is None else padding


class Conv2D(Function):
    name = "conv2d"

    def __init__(self, stride: int = 1, padding: int | None = None):
        self.stride, self.padding = stride, padding

    def forward(self, x, w):
        if x.ndim != 4 or w.ndim != 4:
            raise DimensionError(f"conv2d expects x (B,C,H,W) and w (Cout,Cin,k,k), got {x.shape}, {w.shape}")
        b, cin, h, wd = x.shape
        cout, wcin, k, k2 = w.shape
        if wcin != cin:
            raise DimensionError(f"conv2d: input has {cin} channels but kernels expect {wcin}")
        if k != k2:
            raise DimensionError(f"conv2d: kernels must be square, got {k}x{k2}")
        p = self.p = _check_kernel(k, self.padding)
        s = self.stride
        ho, wo = conv_out_size(h, k, s, p), conv_out_size(wd, k, s, p)
        if ho < 1 or wo < 1:
            raise DimensionError(f"conv2d: empty output for input {x.shape}, k={k}, s={s}, p={p}")
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        self.xp, self.w, self.in_shape, self.out_hw = xp, w, x.shape, (ho, wo)
        if k == 1 and s == 1:
            return (w[:, :, 0, 0] @ xp.reshape(b, cin, -1)).reshape(b, cout, ho, wo)
        out = np.zeros((b, cout, ho * wo))
        for i in range(k):
            for j in range(k):
                patch = _tap(xp, i, j, s, ho, wo).reshape(b, cin, -1)
                out += w[:, :, i, j] @ patch
        return out.reshape(b, cout, ho, wo)

    def backward(self, gy):
        xp, w, s, p = self.xp, self.w, self.stride, self.p
        b, cin, h, wd = self.in_shape
        cout, _, k, _ = w.shape
        ho, wo = self.out_hw
        g2 = gy.reshape(b, cout, -1)
        if k == 1 and s == 1:
            gw = np.tensordot(g2, xp.reshape(b, cin, -1), axes=([0, 2], [0, 2]))[:, :, None, None]
            return (w[:, :, 0, 0].T @ g2).reshape(self.in_shape), gw
        gw = np.zeros_like(w)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                patch = _tap(xp, i, j, s, ho, wo).reshape(b, cin, -1)
                gw[:, :, i, j] = np.tensordot(g2, patch, axes=([0, 2], [0, 2]))
                gxp[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += (
                    w[:, :, i, j].T @ g2
                ).reshape(b, cin, ho, wo)
        gx = gxp[:, :, p : p + h, p : p + wd] if p else gxp
        return gx, gw


class DepthwiseConv2D(Function):
    name = "depthwise_conv2d"

    def __init__(self, stride: int = 1, padding: int | None = None):
        self.stride, self.padding = stride, padding

    def forward(self, x, w):
        if x.ndim != 4 or w.ndim != 3:
            raise DimensionError(f"depthwise_conv2d expects x (B,C,H,W) and w (C,k,k), got {x.shape}, {w.shape}")
        b, c, h, wd = x.shape
        if w.shape[0] != c:
            raise DimensionError(f"depthwise_conv2d: input has {c} channels but kernels expect {w.shape[0]}")
        k = w.shape[1]
        if w.shape[2] != k:
            raise DimensionError(f"depthwise_conv2d: kernels must be square, got {w.shape[1:]}")
        p = self.p = _check_kernel(k, self.padding)
        s = self.stride
        ho, wo = conv_out_size(h, k, s, p), conv_out_size(wd, k, s, p)
        if ho < 1 or wo < 1:
            raise DimensionError(f"depthwise_conv2d: empty output for input {x.shape}, k={k}, s={s}")
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        self.xp, self.w, self.in_shape, self.out_hw = xp, w, x.shape, (ho, wo)
        out = np.zeros((b, c, ho, wo))
        tmp = np.empty_like(out)
        for i in range(k):
            for j in range(k):
                np.multiply(_tap(xp, i, j, s, ho, wo), w[None, :, i, j, None, None], out=tmp)
                out += tmp
        return out

    def backward(self, gy):
        xp, w, s, p = self.xp, self.w, self.stride, self.p
        _, _, h, wd = self.in_shape
        k = w.shape[1]
        ho, wo = self.out_hw
        gw = np.zeros_like(w)
        gxp = np.zeros_like(xp)
        tmp = np.empty_like(gy)
        for i in range(k):
            for j in range(k):
                np.multiply(gy, _tap(xp, i, j, s, ho, wo), out=tmp)
                gw[:, i, j] = tmp.sum(axis=(0, 2, 3))
                np.multiply(gy, w[None, :, i, j, None, None], out=tmp)
                gxp[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += tmp
        gx = gxp[:, :, p : p + h, p : p + wd] if p else gxp
        return gx, gw


class ChannelAffine(Function):
    """``gamma[c] * x + beta[c]`` on ``(B, C, H, W)``; stands in for batch norm."""

    name = "channel_affine"

    def forward(self, x, gamma, beta):
        if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
            raise DimensionError(f"channel_affine: gamma {gamma.shape}, beta {beta.shape} vs input {x.shape}")
        self.x, self.gamma = x, gamma
        return x * gamma[:, None, None] + beta[:, None, None]

    def backward(self, gy):
        return (
            gy * self.gamma[:, None, None],
            (gy * self.x).sum(axis=(0, 2, 3)),
            gy.sum(axis=(0, 2, 3)),
        )


class GlobalAvgPool(Function):
    name = "global_avg_pool"
    linear = True

    def forward(self, x):
        if x.ndim != 4:
            raise DimensionError(f"global_avg_pool expects (B,C,H,W), got {x.shape}")
        self.in_shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, gy):
        _, _, h, w = self.in_shape
        return np.broadcast_to(gy[:, :, None, None] / (h * w), self.in_shape).copy()


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1, *x.shape)), True
    return x, False


def _unbatched(y: Tensor, squeeze: bool) -> Tensor:
    return reshape(y, y.shape[1:]) if squeeze else y


def conv2d(x, kernels, stride: int = 1, padding: int | None = None) -> Tensor:
    x, squeeze = _batched(as_tensor(x))
    return _unbatched(Conv2D(stride, padding)(x, kernels), squeeze)


def depthwise_conv2d(x, kernels, stride: int = 1, padding: int | None = None) -> Tensor:
    x, squeeze = _batched(as_tensor(x))
    return _unbatched(DepthwiseConv2D(stride, padding)(x, kernels), squeeze)


def channel_affine(x, gamma, beta) -> Tensor:
    x, squeeze = _batched(as_tensor(x))
    return _unbatched(ChannelAffine()(x, gamma, beta), squeeze)


def global_avg_pool(x) -> Tensor:
    return GlobalAvgPool()(x)


# ---------------------------------------------------------------------------
# MobileConv block


@dataclass(frozen=True)
class MobileBlockConfig:
    in_channels: int
    out_channels: int
    expansion: int = 4
    stride: int = 1
    kernel: int = 3

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("MobileConv channel counts must be positive")
        if self.expansion < 1:
            raise ConfigError(f"expansion factor must be >= 1, got {self.expansion}")
        if self.stride not in (1, 2):
            raise ConfigError(f"stride must be 1 or 2, got {self.stride}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"kernel size must be odd, got {self.kernel}")

    @property
    def hidden(self) -> int:
        return self.in_channels * self.expansion

    @property
    def residual(self) -> bool:
        return self.stride == 1 and self.in_channels == self.out_channels

    def out_size(self, h: int, w: int) -> tuple[int, int]:
        p = (self.kernel - 1) // 2
        return conv_out_size(h, self.kernel, self.stride, p), conv_out_size(w, self.kernel, self.stride, p)


def mobile_param_shapes(cfg: MobileBlockConfig, prefix: str = "mobile") -> dict[str, tuple[int, ...]]:
    hid, k = cfg.hidden, cfg.kernel
    return {
        f"{prefix}.expand": (hid, cfg.in_channels, 1, 1),
        f"{prefix}.expand_gamma": (hid,),
        f"{prefix}.expand_beta": (hid,),
        f"{prefix}.dw": (hid, k, k),
        f"{prefix}.dw_gamma": (hid,),
        f"{prefix}.dw_beta": (hid,),
        f"{prefix}.project": (cfg.out_channels, hid, 1, 1),
        f"{prefix}.project_gamma": (cfg.out_channels,),
        f"{prefix}.project_beta": (cfg.out_channels,),
    }


def kaiming_normal(rng: RngState, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(shape, std=math.sqrt(2.0 / fan_in))


def init_mobile_params(cfg: MobileBlockConfig, rng: RngState, prefix: str = "mobile") -> dict[str, Tensor]:
    params = {}
    for name, shape in mobile_param_shapes(cfg, prefix).items():
        if name.endswith("_gamma"):
            data = np.ones(shape)
        elif name.endswith("_beta"):
            data = np.zeros(shape)
        elif name.endswith(".dw"):
            data = kaiming_normal(rng, shape, cfg.kernel * cfg.kernel)
        else:
            data = kaiming_normal(rng, shape, shape[1])
        params[name] = Tensor(data, name=name)
    return params


def mobile_block(x, cfg: MobileBlockConfig, weights: dict[str, Tensor], prefix: str = "mobile") -> Tensor:
    """expand 1x1 -> relu6 -> depthwise kxk (stride s) -> relu6 -> project 1x1, plus skip when shapes allow."""
    x = as_tensor(x)
    w = weights
    h = conv2d(x, w[f"{prefix}.expand"])
    h = relu6(channel_affine(h, w[f"{prefix}.expand_gamma"], w[f"{prefix}.expand_beta"]))
    h = depthwise_conv2d(h, w[f"{prefix}.dw"], stride=cfg.stride)
    h = relu6(channel_affine(h, w[f"{prefix}.dw_gamma"], w[f"{prefix}.dw_beta"]))
    h = conv2d(h, w[f"{prefix}.project"])
    h = channel_affine(h, w[f"{prefix}.project_gamma"], w[f"{prefix}.project_beta"])
    if cfg.residual:
        h = add(h, x)
    return h
