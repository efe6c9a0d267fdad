"""Central finite-difference checks for every registered op and the micro model.

Each op in :data:`dcthisto.tensor.OPS` must have a case builder in
:data:`CASES`; :func:`check_scope` refuses to run ``"all"`` when one is missing.
The scalar under test is ``sum(op(*inputs) * R)`` for a fixed random ``R``.
Linear single-input ops additionally get an inner-product adjoint test
``<A x, y> == <x, A^T y>``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import attention as _attention  # noqa: F401  (registers ops)
from . import frequency as F
from . import mobileconv as MC
from . import tensor as T
from .train import cross_entropy
from .model import forward, init_params, micro_config
from .rng import RngState

STEP = 1e-5
TOLERANCE = 1e-4
ADJOINT_TOLERANCE = 1e-10

Case = tuple[Callable[..., T.Tensor], list[np.ndarray]]
CASES: dict[str, Callable[[RngState], list[Case]]] = {}


def register_case(name: str):
    def deco(fn):
        CASES[name] = fn
        return fn

    return deco


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    adjoint_error: float | None = None

    @property
    def passed(self) -> bool:
        ok = self.max_rel_error < TOLERANCE
        if self.adjoint_error is not None:
            ok = ok and self.adjoint_error < ADJOINT_TOLERANCE
        return ok


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)``; falls back to the absolute error for near-zero gradients."""
    diff = float(np.linalg.norm(analytic - numeric))
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)))
    return diff if scale < 1e-8 else diff / scale


def numerical_grad(f: Callable[[], float], x: np.ndarray, step: float = STEP) -> np.ndarray:
    """Central differences of ``f`` w.r.t. every entry of ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * step)
    return g


def check_function(name: str, fn: Callable[..., T.Tensor], inputs: list[np.ndarray], rng: RngState) -> CheckResult:
    xs = [np.array(a, dtype=np.float64) for a in inputs]
    tensors = [T.Tensor(a) for a in xs]
    with T.GradTape() as tape:
        out = fn(*tensors)
        proj = rng.normal(out.shape)
        loss = T.sum_all(T.mul(out, T.Tensor(proj)))
    analytic = tape.gradient(loss, tensors)

    def scalar() -> float:
        return float(np.sum(fn(*tensors).data * proj))

    errs = [rel_error(a, numerical_grad(scalar, t.data)) for a, t in zip(analytic, tensors)]
    return CheckResult(name, max(errs) if errs else 0.0)


def adjoint_error(fn: Callable[[T.Tensor], T.Tensor], x: np.ndarray, rng: RngState) -> float:
    """Relative mismatch of ``<A x, y>`` and ``<x, A^T y>`` using the recorded backward."""
    xt = T.Tensor(np.array(x, dtype=np.float64))
    with T.GradTape() as tape:
        ax = fn(xt)
        y = rng.normal(ax.shape)
        loss = T.sum_all(T.mul(ax, T.Tensor(y)))
    (aty,) = tape.gradient(loss, [xt])
    lhs = float(np.sum(ax.data * y))
    rhs = float(np.sum(xt.data * aty))
    return abs(lhs - rhs) / max(1.0, abs(lhs), abs(rhs))


def check_op(name: str, seed: int = 0) -> CheckResult:
    if name not in CASES:
        raise KeyError(f"no gradcheck case for op {name!r}")
    rng = RngState(seed).split(name)
    worst = CheckResult(name, 0.0)
    adj = None
    linear = getattr(T.OPS.get(name), "linear", False)
    for fn, inputs in CASES[name](rng):
        res = check_function(name, fn, inputs, rng)
        worst.max_rel_error = max(worst.max_rel_error, res.max_rel_error)
        if linear and len(inputs) == 1:
            e = adjoint_error(fn, inputs[0], rng)
            adj = e if adj is None else max(adj, e)
    worst.adjoint_error = adj
    return worst


def check_model(seed: int = 0, batch: int = 2) -> CheckResult:
    """Every weight of the 2-block micro model against central differences."""
    cfg = micro_config()
    rng = RngState(seed)
    params = init_params(cfg, rng.split("init"))
    # Evaluate at a generic point: zero betas put whole channels exactly on the
    # relu6 kink at 0, where central differences are meaningless. Attention
    # weights are also enlarged so that branch contributes measurably.
    for k, v in params.items():
        r = rng.split(k)
        if k.endswith(("gamma",)):
            v.data = 1.0 + r.normal(v.shape, std=0.2)
        elif k.endswith(("beta",)):
            v.data = r.normal(v.shape, std=0.2)
        elif ".attn." in k:
            v.data = r.normal(v.shape, std=0.5)
    x = rng.split("x").random((batch,) + cfg.input_shape)
    y = np.arange(batch) % cfg.num_classes
    with T.GradTape() as tape:
        loss = cross_entropy(forward(cfg, params, x), y)
    grads = T.backward(tape, loss, params)

    def scalar() -> float:
        return cross_entropy(forward(cfg, params, x), y).item()

    worst = 0.0
    for name, p in params.items():
        worst = max(worst, rel_error(grads[name], numerical_grad(scalar, p.data)))
    return CheckResult("model", worst)


def check_scope(scope: str = "all", seed: int = 0) -> list[CheckResult]:
    if scope == "model":
        return [check_model(seed)]
    if scope == "all":
        missing = sorted(set(T.OPS) - set(CASES))
        if missing:
            raise KeyError(f"registered ops without gradcheck cases: {missing}")
        return [check_op(name, seed) for name in sorted(T.OPS)] + [check_model(seed)]
    return [check_op(scope, seed)]


# ---------------------------------------------------------------------------
# cases


def _away_from(rng: RngState, shape, lo, hi, kinks, gap=1e-2) -> np.ndarray:
    x = rng.uniform(shape, lo, hi)
    for k in kinks:
        near = np.abs(x - k) < gap
        x[near] += 2 * gap
    return x


@register_case("add")
def _(rng):
    return [(T.add, [rng.normal((3, 4)), rng.normal((3, 4))])]


@register_case("sub")
def _(rng):
    return [(T.sub, [rng.normal((3, 4)), rng.normal((3, 4))])]


@register_case("mul")
def _(rng):
    return [(T.mul, [rng.normal((3, 4)), rng.normal((3, 4))])]


@register_case("scale")
def _(rng):
    return [(lambda x: T.scale(x, -1.7), [rng.normal((2, 5))])]


@register_case("add_scalar")
def _(rng):
    return [(lambda x: T.add_scalar(x, 0.3), [rng.normal((2, 5))])]


@register_case("relu6")
def _(rng):
    return [(T.relu6, [_away_from(rng, (4, 6), -2.0, 8.0, (0.0, 6.0))])]


@register_case("gelu")
def _(rng):
    return [(T.gelu, [rng.normal((4, 5), std=2.0)])]


@register_case("matmul")
def _(rng):
    return [
        (T.matmul, [rng.normal((3, 4)), rng.normal((4, 2))]),
        (T.matmul, [rng.normal((2, 3, 4)), rng.normal((2, 4, 5))]),
        (T.matmul, [rng.normal((2, 3, 4)), rng.normal((4, 5))]),
    ]


@register_case("softmax")
def _(rng):
    return [
        (lambda x: T.softmax(x, -1), [rng.normal((3, 5))]),
        (lambda x: T.softmax(x, 1), [rng.normal((2, 4, 3))]),
    ]


@register_case("reshape")
def _(rng):
    return [(lambda x: T.reshape(x, (6, 2)), [rng.normal((3, 4))])]


@register_case("transpose")
def _(rng):
    return [(lambda x: T.transpose(x, (2, 0, 1)), [rng.normal((2, 3, 4))])]


@register_case("swap_last")
def _(rng):
    return [(T.swap_last, [rng.normal((2, 3, 4))])]


@register_case("sum")
def _(rng):
    return [(T.sum_all, [rng.normal((3, 4))])]


@register_case("mean")
def _(rng):
    return [(T.mean_all, [rng.normal((3, 4))])]


@register_case("slice")
def _(rng):
    return [(lambda x: T.slice_axis(x, 1, 1, 3), [rng.normal((2, 4, 3))])]


@register_case("concat")
def _(rng):
    return [(lambda a, b: T.concat([a, b], -1), [rng.normal((2, 3)), rng.normal((2, 2))])]


@register_case("bias_add")
def _(rng):
    return [(T.bias_add, [rng.normal((2, 3, 4)), rng.normal(4)])]


@register_case("dct2d")
def _(rng):
    return [
        (lambda x: F.DCT2D()(x), [rng.normal((2, 5, 6))]),
        (lambda x: F.DCT2D(F.RAW)(x), [rng.normal((3, 4))]),
    ]


@register_case("idct2d")
def _(rng):
    return [
        (lambda x: F.IDCT2D()(x), [rng.normal((2, 5, 6))]),
        (lambda x: F.IDCT2D(F.RAW)(x), [rng.normal((3, 4))]),
    ]


@register_case("lowpass_crop")
def _(rng):
    return [(lambda x: F.SpectralCrop(2, 3)(x), [rng.normal((2, 4, 6))])]


@register_case("freq_zero_pad")
def _(rng):
    return [(lambda x: F.SpectralZeroPad(5, 4)(x), [rng.normal((2, 3, 2))])]


@register_case("dc_normalize")
def _(rng):
    return [(F.DCNormalize(), [rng.normal((2, 3, 4, 4)), rng.normal(3), rng.normal(3)])]


@register_case("conv2d")
def _(rng):
    return [
        (lambda x, w: MC.Conv2D(1)(x, w), [rng.normal((2, 3, 5, 5)), rng.normal((4, 3, 3, 3))]),
        (lambda x, w: MC.Conv2D(2)(x, w), [rng.normal((1, 2, 6, 6)), rng.normal((3, 2, 3, 3))]),
        (lambda x, w: MC.Conv2D(1)(x, w), [rng.normal((2, 3, 4, 4)), rng.normal((5, 3, 1, 1))]),
    ]


@register_case("depthwise_conv2d")
def _(rng):
    return [
        (lambda x, w: MC.DepthwiseConv2D(1)(x, w), [rng.normal((2, 3, 5, 5)), rng.normal((3, 3, 3))]),
        (lambda x, w: MC.DepthwiseConv2D(2)(x, w), [rng.normal((1, 2, 6, 6)), rng.normal((2, 3, 3))]),
    ]


@register_case("channel_affine")
def _(rng):
    return [(MC.ChannelAffine(), [rng.normal((2, 3, 4, 4)), rng.normal(3), rng.normal(3)])]


@register_case("global_avg_pool")
def _(rng):
    return [(MC.global_avg_pool, [rng.normal((2, 3, 4, 5))])]


@register_case("cross_entropy")
def _(rng):
    labels = np.array([0, 2, 1, 2])
    return [(lambda z: cross_entropy(z, labels), [rng.normal((4, 3), std=2.0)])]
