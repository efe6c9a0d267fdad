"""Dense float64 tensors with tape-based reverse-mode differentiation.

Storage is a row-major numpy array. Every differentiable operation is a
:class:`Function` subclass; defining one without a ``backward`` raises at
class-creation time, so no op can silently contribute a zero gradient.

Operations are recorded only while a :class:`GradTape` is active::

    with GradTape() as tape:
        loss = f(w)
    (gw,) = tape.gradient(loss, [w])
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import DimensionError, NumericError

OPS: dict[str, type["Function"]] = {}

_tape_stack: list["GradTape"] = []


class Tensor:
    """Row-major float64 array. The shape never changes after construction."""

    __slots__ = ("data", "name")
    __array_priority__ = 100

    def __init__(self, data, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        self.data = arr
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __len__(self):
        return self.shape[0]

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __rsub__(self, other):
        return add_scalar(scale(self, -1.0), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        return transpose(self, axes or None)

    def sum(self) -> "Tensor":
        return sum_all(self)

    def mean(self) -> "Tensor":
        return mean_all(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape))


def ones(shape) -> Tensor:
    return Tensor(np.ones(shape))


def identity(n: int) -> Tensor:
    return Tensor(np.eye(n))


# ---------------------------------------------------------------------------
# tape machinery


class GradTape:
    """Records executed ops; replays them in reverse to produce gradients."""

    def __init__(self):
        self._entries: list[tuple[Function, tuple[Tensor, ...], Tensor]] = []

    def __enter__(self) -> "GradTape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack.remove(self)
        return False

    def __len__(self):
        return len(self._entries)

    def record(self, fn: "Function", inputs: tuple[Tensor, ...], output: Tensor) -> None:
        self._entries.append((fn, inputs, output))

    def gradient(self, target: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of scalar ``target`` w.r.t. each of ``sources``.

        Sources never touched by the recorded graph get a zero gradient.
        """
        if target.size != 1:
            raise DimensionError(f"gradient target must be a scalar, got shape {target.shape}")
        grads: dict[int, np.ndarray] = {id(target): np.ones_like(target.data)}
        for fn, inputs, out in reversed(self._entries):
            gy = grads.get(id(out))
            if gy is None:
                continue
            gxs = fn.backward(gy)
            if not isinstance(gxs, tuple):
                gxs = (gxs,)
            if len(gxs) != len(inputs):
                raise RuntimeError(f"{fn.name}.backward returned {len(gxs)} grads for {len(inputs)} inputs")
            for x, gx in zip(inputs, gxs):
                if gx is None:
                    continue
                if gx.shape != x.shape:
                    raise RuntimeError(f"{fn.name}.backward produced grad {gx.shape} for input {x.shape}")
                key = id(x)
                prev = grads.get(key)
                grads[key] = gx if prev is None else prev + gx
        return [grads.get(id(s), np.zeros_like(s.data)) for s in sources]


def current_tape() -> GradTape | None:
    return _tape_stack[-1] if _tape_stack else None


def backward(tape: GradTape, loss: Tensor, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients of ``loss`` for every named tensor in ``params``."""
    names = list(params)
    grads = tape.gradient(loss, [params[n] for n in names])
    return dict(zip(names, grads))


class Function:
    """Base class of every differentiable op.

    Subclasses set ``name`` and implement ``forward`` on numpy arrays and
    ``backward`` returning one gradient (or None) per input.
    """

    name: str = ""
    linear: bool = False

    def __init_subclass__(cls, register: bool = True, **kwargs):
        super().__init_subclass__(**kwargs)
        if not register:
            return
        if cls.backward is Function.backward:
            raise TypeError(f"op {cls.__name__} defines no adjoint (backward)")
        key = cls.name or cls.__name__.lower()
        cls.name = key
        OPS[key] = cls

    def __call__(self, *inputs) -> Tensor:
        xs = tuple(as_tensor(x) for x in inputs)
        out = Tensor(self.forward(*(x.data for x in xs)))
        tape = current_tape()
        if tape is not None:
            tape.record(self, xs, out)
        return out

    def forward(self, *xs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, gy: np.ndarray):
        raise NotImplementedError


def _same_shape(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise


class Add(Function):
    name = "add"
    linear = True

    def forward(self, a, b):
        _same_shape("add", a, b)
        return a + b

    def backward(self, gy):
        return gy, gy


class Sub(Function):
    name = "sub"
    linear = True

    def forward(self, a, b):
        _same_shape("sub", a, b)
        return a - b

    def backward(self, gy):
        return gy, -gy


class Mul(Function):
    name = "mul"

    def forward(self, a, b):
        _same_shape("mul", a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, gy):
        return gy * self.b, gy * self.a


class Scale(Function):
    name = "scale"
    linear = True

    def __init__(self, factor: float):
        self.factor = factor

    def forward(self, x):
        return x * self.factor

    def backward(self, gy):
        return gy * self.factor


class AddScalar(Function):
    name = "add_scalar"

    def __init__(self, value: float):
        self.value = value

    def forward(self, x):
        return x + self.value

    def backward(self, gy):
        return gy


class Relu6(Function):
    name = "relu6"

    def forward(self, x):
        self.mask = (x > 0.0) & (x < 6.0)
        return np.minimum(np.maximum(x, 0.0), 6.0)

    def backward(self, gy):
        return gy * self.mask


class Gelu(Function):
    """Exact (erf-based) GELU."""

    name = "gelu"

    def forward(self, x):
        self.x = x
        self.cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
        return x * self.cdf

    def backward(self, gy):
        pdf = np.exp(-0.5 * self.x**2) / math.sqrt(2.0 * math.pi)
        return gy * (self.cdf + self.x * pdf)


def add(a, b) -> Tensor:
    return Add()(a, b)


def sub(a, b) -> Tensor:
    return Sub()(a, b)


def mul(a, b) -> Tensor:
    return Mul()(a, b)


def scale(x, factor: float) -> Tensor:
    return Scale(factor)(x)


def add_scalar(x, value: float) -> Tensor:
    return AddScalar(value)(x)


def relu6(x) -> Tensor:
    return Relu6()(x)


def gelu(x) -> Tensor:
    return Gelu()(x)


_BINARY = {"add": add, "sub": sub, "mul": mul}
_UNARY = {"relu6": relu6, "gelu": gelu}


def elementwise(op: str, a, b=None) -> Tensor:
    """Pointwise ``op`` on identical shapes, or tensor-vs-scalar.

    ``scale`` takes a scalar ``b``; binary ops accept either a same-shaped
    tensor or a Python number for ``b``.
    """
    if op in _UNARY:
        return _UNARY[op](a)
    if op == "scale":
        return scale(a, float(b))
    if op not in _BINARY:
        raise ValueError(f"unknown elementwise op {op!r}")
    if isinstance(b, (int, float, np.floating, np.integer)):
        if op == "mul":
            return scale(a, float(b))
        return add_scalar(a, float(b) if op == "add" else -float(b))
    return _BINARY[op](a, b)


# ---------------------------------------------------------------------------
# linear algebra and shape ops


class MatMul(Function):
    """``a[..., M, K] @ b[..., K, N]``; ``b`` may also be a shared 2-D matrix."""

    name = "matmul"

    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or (
            b.ndim > 2 and a.shape[:-2] != b.shape[:-2]
        ):
            raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        self.a, self.b = a, b
        return a @ b

    def backward(self, gy):
        a, b = self.a, self.b
        ga = gy @ np.swapaxes(b, -1, -2)
        if b.ndim == 2 and a.ndim > 2:
            k = a.shape[-1]
            gb = a.reshape(-1, k).T @ gy.reshape(-1, gy.shape[-1])
        else:
            gb = np.swapaxes(a, -1, -2) @ gy
        return ga, gb


class Softmax(Function):
    name = "softmax"

    def __init__(self, axis: int = -1):
        self.axis = axis

    def forward(self, x):
        if not np.isfinite(x).all():
            raise NumericError("softmax received non-finite input")
        z = x - x.max(axis=self.axis, keepdims=True)
        np.exp(z, out=z)
        z /= z.sum(axis=self.axis, keepdims=True)
        self.y = z
        return z

    def backward(self, gy):
        y = self.y
        g = gy - (gy * y).sum(axis=self.axis, keepdims=True)
        g *= y
        return g


class Reshape(Function):
    name = "reshape"
    linear = True

    def __init__(self, shape):
        self.shape = tuple(shape)

    def forward(self, x):
        self.in_shape = x.shape
        try:
            return x.reshape(self.shape)
        except ValueError as e:
            raise DimensionError(f"cannot reshape {x.shape} to {self.shape}") from e

    def backward(self, gy):
        return gy.reshape(self.in_shape)


class Transpose(Function):
    name = "transpose"
    linear = True

    def __init__(self, axes=None):
        self.axes = None if axes is None else tuple(axes)

    def forward(self, x):
        return np.transpose(x, self.axes)

    def backward(self, gy):
        if self.axes is None:
            return np.transpose(gy)
        return np.transpose(gy, np.argsort(self.axes))


class SwapLast(Function):
    """Swap the last two axes (batched matrix transpose)."""

    name = "swap_last"
    linear = True

    def forward(self, x):
        return np.swapaxes(x, -1, -2)

    def backward(self, gy):
        return np.swapaxes(gy, -1, -2)


class SumAll(Function):
    name = "sum"
    linear = True

    def forward(self, x):
        self.in_shape = x.shape
        return np.asarray(x.sum())

    def backward(self, gy):
        return np.broadcast_to(gy, self.in_shape).copy()


class MeanAll(Function):
    name = "mean"
    linear = True

    def forward(self, x):
        self.in_shape = x.shape
        return np.asarray(x.mean())

    def backward(self, gy):
        return np.full(self.in_shape, float(gy) / max(1, int(np.prod(self.in_shape))))


class SliceAxis(Function):
    name = "slice"
    linear = True

    def __init__(self, axis: int, start: int, stop: int):
        self.axis, self.start, self.stop = axis, start, stop

    def forward(self, x):
        self.in_shape = x.shape
        idx = [slice(None)] * x.ndim
        idx[self.axis] = slice(self.start, self.stop)
        return x[tuple(idx)]

    def backward(self, gy):
        g = np.zeros(self.in_shape)
        idx = [slice(None)] * g.ndim
        idx[self.axis] = slice(self.start, self.stop)
        g[tuple(idx)] = gy
        return g


class Concat(Function):
    name = "concat"
    linear = True

    def __init__(self, axis: int):
        self.axis = axis

    def forward(self, *xs):
        self.sizes = [x.shape[self.axis] for x in xs]
        return np.concatenate(xs, axis=self.axis)

    def backward(self, gy):
        cuts = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(gy, cuts, axis=self.axis))


class BiasAdd(Function):
    """``x[..., K] + b[K]``: the only broadcast the substrate allows."""

    name = "bias_add"

    def forward(self, x, b):
        if b.ndim != 1 or x.shape[-1] != b.shape[0]:
            raise DimensionError(f"bias_add: bias {b.shape} does not match last axis of {x.shape}")
        return x + b

    def backward(self, gy):
        return gy, gy.reshape(-1, gy.shape[-1]).sum(axis=0)


def matmul(a, b) -> Tensor:
    return MatMul()(a, b)


def softmax(x, axis: int = -1) -> Tensor:
    return Softmax(axis)(x)


def reshape(x, shape) -> Tensor:
    return Reshape(shape)(x)


def transpose(x, axes=None) -> Tensor:
    return Transpose(axes)(x)


def swap_last(x) -> Tensor:
    return SwapLast()(x)


def sum_all(x) -> Tensor:
    return SumAll()(x)


def mean_all(x) -> Tensor:
    return MeanAll()(x)


def slice_axis(x, axis: int, start: int, stop: int) -> Tensor:
    return SliceAxis(axis, start, stop)(x)


def concat(xs: Iterable[Tensor], axis: int) -> Tensor:
    return Concat(axis)(*xs)


def bias_add(x, b) -> Tensor:
    return BiasAdd()(x, b)


def linear(x, w, b=None) -> Tensor:
    """``x @ w (+ b)`` with ``w`` of shape (in, out)."""
    y = matmul(x, w)
    return y if b is None else bias_add(y, b)
