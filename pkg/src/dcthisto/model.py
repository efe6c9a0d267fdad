"""Staged DCT-Conv classifier, parameter counting and MAC accounting.

Layout: strided 3x3 stem -> stages of DCT-Conv blocks -> global average
pool -> linear head. A DCT-Conv block adds the frequency-attention branch
and the MobileConv branch elementwise; the attention branch's spectrum is
zero-padded (or cropped) to the MobileConv output size before the inverse
transform so both branches agree in shape.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable

import numpy as np

from .attention import CgaConfig, cga_param_shapes, dct_attention_branch, init_branch_params
from .errors import ConfigError, DimensionError
from .mobileconv import (
    MobileBlockConfig,
    channel_affine,
    conv2d,
    conv_out_size,
    global_avg_pool,
    init_mobile_params,
    kaiming_normal,
    mobile_block,
    mobile_param_shapes,
)
from .rng import RngState
from .tensor import Tensor, add, as_tensor, linear, relu6


@dataclass(frozen=True)
class DctConvBlockConfig:
    in_channels: int
    out_channels: int
    in_size: tuple[int, int]
    r: int = 2
    heads: int = 2
    key_dim: int | None = None
    expansion: int = 4
    stride: int = 1
    kernel: int = 3

    def __post_init__(self):
        object.__setattr__(self, "in_size", tuple(self.in_size))
        m, n = self.in_size
        if self.r < 1 or m % self.r or n % self.r:
            raise ConfigError(f"reduction factor r={self.r} must divide block input size M={m}, N={n}")
        # both sub-configs validate themselves
        self.cga
        self.mobile

    @property
    def cga(self) -> CgaConfig:
        return CgaConfig(self.in_channels, self.heads, self.key_dim, self.out_channels)

    @property
    def mobile(self) -> MobileBlockConfig:
        return MobileBlockConfig(self.in_channels, self.out_channels, self.expansion, self.stride, self.kernel)

    @property
    def out_size(self) -> tuple[int, int]:
        return self.mobile.out_size(*self.in_size)

    @property
    def freq_size(self) -> tuple[int, int]:
        m, n = self.in_size
        return m // self.r, n // self.r

    @property
    def tokens(self) -> int:
        m, n = self.freq_size
        return m * n


@dataclass(frozen=True)
class StageConfig:
    blocks: int
    channels: int
    stride: int = 1
    r: int = 2
    heads: int = 2
    key_dim: int | None = None
    expansion: int = 4
    kernel: int = 3


def _default_stages() -> tuple[StageConfig, ...]:
    return (
        StageConfig(blocks=2, channels=32, stride=1, r=2, heads=2),
        StageConfig(blocks=1, channels=64, stride=2, r=2, heads=4),
        StageConfig(blocks=1, channels=128, stride=2, r=2, heads=4),
    )


@dataclass(frozen=True)
class ModelConfig:
    input_shape: tuple[int, int, int] = (3, 224, 224)
    stem_channels: int = 32
    stem_stride: int = 2
    stem_kernel: int = 3
    stages: tuple[StageConfig, ...] = field(default_factory=_default_stages)
    num_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(
            self, "stages", tuple(s if isinstance(s, StageConfig) else StageConfig(**s) for s in self.stages)
        )
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigError(f"input_shape must be (C, H, W), got {self.input_shape}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if not self.stages or any(s.blocks < 1 for s in self.stages):
            raise ConfigError("every stage needs at least one block")
        self.blocks()  # validates the shape chain

    @property
    def stem_out_size(self) -> tuple[int, int]:
        _, h, w = self.input_shape
        p = (self.stem_kernel - 1) // 2
        return (
            conv_out_size(h, self.stem_kernel, self.stem_stride, p),
            conv_out_size(w, self.stem_kernel, self.stem_stride, p),
        )

    def blocks(self) -> list[DctConvBlockConfig]:
        size = self.stem_out_size
        channels = self.stem_channels
        out = []
        for stage in self.stages:
            for i in range(stage.blocks):
                try:
                    cfg = DctConvBlockConfig(
                        in_channels=channels,
                        out_channels=stage.channels,
                        in_size=size,
                        r=stage.r,
                        heads=stage.heads,
                        key_dim=stage.key_dim,
                        expansion=stage.expansion,
                        stride=stage.stride if i == 0 else 1,
                        kernel=stage.kernel,
                    )
                except ConfigError as e:
                    raise ConfigError(f"block {len(out)}: {e}") from e
                out.append(cfg)
                size, channels = cfg.out_size, cfg.out_channels
        return out

    @property
    def feature_channels(self) -> int:
        return self.stages[-1].channels

    def with_r(self, r: int) -> "ModelConfig":
        return replace(self, stages=tuple(replace(s, r=r) for s in self.stages))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        d["stages"] = [asdict(s) for s in self.stages]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        if "stages" in d:
            d["stages"] = tuple(StageConfig(**s) for s in d["stages"])
        if "input_shape" in d:
            d["input_shape"] = tuple(d["input_shape"])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def desk_config(num_classes: int = 2, size: int = 64) -> ModelConfig:
    """Default 4-block layout at a reduced input resolution."""
    return ModelConfig(input_shape=(3, size, size), num_classes=num_classes)


def micro_config(num_classes: int = 2, size: int = 16) -> ModelConfig:
    """Two-block model small enough for exhaustive finite-difference checks."""
    return ModelConfig(
        input_shape=(3, size, size),
        stem_channels=4,
        stages=(
            StageConfig(blocks=1, channels=4, stride=1, r=2, heads=2, expansion=2),
            StageConfig(blocks=1, channels=8, stride=2, r=2, heads=2, expansion=2),
        ),
        num_classes=num_classes,
    )


# ---------------------------------------------------------------------------
# parameters


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    c_in = cfg.input_shape[0]
    k = cfg.stem_kernel
    shapes = {
        "stem.w": (cfg.stem_channels, c_in, k, k),
        "stem.gamma": (cfg.stem_channels,),
        "stem.beta": (cfg.stem_channels,),
    }
    for i, b in enumerate(cfg.blocks()):
        shapes[f"block{i}.attn.dc_gamma"] = (b.in_channels,)
        shapes[f"block{i}.attn.dc_beta"] = (b.in_channels,)
        shapes.update(cga_param_shapes(b.cga, f"block{i}.attn"))
        shapes.update(mobile_param_shapes(b.mobile, f"block{i}.mobile"))
    shapes["head.w"] = (cfg.feature_channels, cfg.num_classes)
    shapes["head.b"] = (cfg.num_classes,)
    return shapes


def init_params(cfg: ModelConfig, rng: RngState) -> dict[str, Tensor]:
    """Truncated-normal (std 0.02) projections, fan-in scaled convolutions."""
    c_in = cfg.input_shape[0]
    k = cfg.stem_kernel
    params = {
        "stem.w": Tensor(kaiming_normal(rng.split("stem"), (cfg.stem_channels, c_in, k, k), c_in * k * k)),
        "stem.gamma": Tensor(np.ones(cfg.stem_channels)),
        "stem.beta": Tensor(np.zeros(cfg.stem_channels)),
    }
    for i, b in enumerate(cfg.blocks()):
        params.update(init_branch_params(b.cga, rng.split(f"block{i}.attn"), f"block{i}.attn"))
        params.update(init_mobile_params(b.mobile, rng.split(f"block{i}.mobile"), f"block{i}.mobile"))
    params["head.w"] = Tensor(rng.split("head").truncated_normal((cfg.feature_channels, cfg.num_classes), std=0.02))
    params["head.b"] = Tensor(np.zeros(cfg.num_classes))
    for name, t in params.items():
        t.name = name
    return params


def count_params(params) -> int:
    """Number of learnable scalars in a tensor mapping, a model config, or a shape mapping."""
    if isinstance(params, ModelConfig):
        params = param_shapes(params)
    total = 0
    for v in params.values():
        shape = v.shape if isinstance(v, Tensor) else tuple(v)
        total += int(np.prod(shape, dtype=np.int64))
    return total


# ---------------------------------------------------------------------------
# forward


def dct_conv_block(x, cfg: DctConvBlockConfig, weights: dict[str, Tensor], prefix: str = "block") -> Tensor:
    x = as_tensor(x)
    local = mobile_block(x, cfg.mobile, weights, f"{prefix}.mobile")
    glob = dct_attention_branch(x, cfg.r, cfg.cga, weights, target=cfg.out_size, prefix=f"{prefix}.attn")
    return add(glob, local)


def features(cfg: ModelConfig, params: dict[str, Tensor], batch) -> Tensor:
    x = as_tensor(batch)
    if x.ndim != 4 or x.shape[1:] != cfg.input_shape:
        raise DimensionError(f"expected input (B, {', '.join(map(str, cfg.input_shape))}), got {x.shape}")
    h = conv2d(x, params["stem.w"], stride=cfg.stem_stride)
    h = relu6(channel_affine(h, params["stem.gamma"], params["stem.beta"]))
    for i, b in enumerate(cfg.blocks()):
        h = dct_conv_block(h, b, params, f"block{i}")
    return h


def forward(cfg: ModelConfig, params: dict[str, Tensor], batch) -> Tensor:
    """Logits ``(B, num_classes)`` for a ``(B, C, H, W)`` batch."""
    pooled = global_avg_pool(features(cfg, params, batch))
    return linear(pooled, params["head.w"], params["head.b"])


class DctHistoModel:
    """Config plus parameters, callable on a batch."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, RngState(seed).split("init"))

    def __call__(self, batch) -> Tensor:
        return forward(self.config, self.params, batch)

    def num_params(self) -> int:
        return count_params(self.params)


# ---------------------------------------------------------------------------
# MAC accounting


@dataclass(frozen=True)
class FlopEntry:
    scope: str
    branch: str
    op: str
    macs: int


@dataclass
class FlopsReport:
    """Exact multiply-accumulate counts per op. Elementwise ops and softmax are not counted."""

    entries: list[FlopEntry] = field(default_factory=list)

    def add(self, scope: str, branch: str, op: str, macs: int) -> None:
        self.entries.append(FlopEntry(scope, branch, op, int(macs)))

    @property
    def total(self) -> int:
        return sum(e.macs for e in self.entries)

    @property
    def attention_score(self) -> int:
        return sum(e.macs for e in self.entries if e.op == "attn_scores")

    def by(self, key: str) -> dict[str, int]:
        out: dict[str, int] = {}
        for e in self.entries:
            k = getattr(e, key)
            out[k] = out.get(k, 0) + e.macs
        return out

    def to_dict(self) -> dict:
        return {
            "total_macs": self.total,
            "attn_score_macs": self.attention_score,
            "by_scope": self.by("scope"),
            "by_branch": self.by("branch"),
            "entries": [asdict(e) for e in self.entries],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scope", "branch", "op", "macs"])
        for e in self.entries:
            w.writerow([e.scope, e.branch, e.op, e.macs])
        return buf.getvalue()


def matmul_macs(m: int, k: int, n: int) -> int:
    return m * k * n


def conv_macs(c_out: int, c_in: int, k: int, h_out: int, w_out: int) -> int:
    return c_out * c_in * k * k * h_out * w_out


def attention_score_macs(heads: int, length: int, d_k: int) -> int:
    return heads * length * length * d_k


def block_flops(report: FlopsReport, b: DctConvBlockConfig, scope: str) -> None:
    m, n = b.in_size
    fm, fn = b.freq_size
    om, on = b.out_size
    cga = b.cga
    L = b.tokens
    c = b.in_channels
    a = "attention"
    report.add(scope, a, "dct2d", c * (m * m * n + m * n * n))
    report.add(scope, a, "q_proj", cga.heads * matmul_macs(L, cga.split, cga.d_k))
    report.add(scope, a, "k_proj", cga.heads * matmul_macs(L, cga.split, cga.d_k))
    report.add(scope, a, "v_proj", cga.heads * matmul_macs(L, cga.split, cga.d_v))
    report.add(scope, a, "attn_scores", attention_score_macs(cga.heads, L, cga.d_k))
    report.add(scope, a, "attn_values", cga.heads * L * L * cga.d_v)
    report.add(scope, a, "out_proj", matmul_macs(L, cga.heads * cga.d_v, cga.c_out))
    report.add(scope, a, "idct2d", cga.c_out * (om * om * on + om * on * on))
    mb = b.mobile
    mo = "mobileconv"
    report.add(scope, mo, "expand", conv_macs(mb.hidden, mb.in_channels, 1, m, n))
    report.add(scope, mo, "depthwise", mb.hidden * mb.kernel * mb.kernel * om * on)
    report.add(scope, mo, "project", conv_macs(mb.out_channels, mb.hidden, 1, om, on))


def count_flops(cfg: ModelConfig, input_shape: Iterable[int] | None = None) -> FlopsReport:
    """Per-image MAC counts; ``input_shape`` (C, H, W) overrides the config's."""
    if input_shape is not None and tuple(input_shape) != cfg.input_shape:
        cfg = replace(cfg, input_shape=tuple(input_shape))
    report = FlopsReport()
    sh, sw = cfg.stem_out_size
    report.add("stem", "stem", "conv", conv_macs(cfg.stem_channels, cfg.input_shape[0], cfg.stem_kernel, sh, sw))
    for i, b in enumerate(cfg.blocks()):
        block_flops(report, b, f"block{i}")
    report.add("head", "head", "linear", matmul_macs(1, cfg.feature_channels, cfg.num_classes))
    return report
