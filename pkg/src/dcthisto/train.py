"""Cross-entropy loss, AdamW, and the deterministic training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Protocol

import numpy as np

from .data import AugmentConfig, augment
from .errors import ConfigError, InputError, NumericError
from .metrics import ConfusionMatrix, compute_metrics
from .model import ModelConfig, forward, init_params
from .rng import RngState
from .tensor import Function, GradTape, Tensor, as_tensor, backward

log = logging.getLogger(__name__)


class CrossEntropy(Function):
    """Mean over the batch of ``-log softmax(logits)[label]``."""

    name = "cross_entropy"

    def __init__(self, labels):
        self.labels = np.asarray(labels, dtype=np.int64)

    def forward(self, logits):
        if logits.ndim != 2 or logits.shape[0] != self.labels.shape[0]:
            raise InputError(f"logits {logits.shape} do not match {self.labels.shape[0]} labels")
        k = logits.shape[1]
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= k):
            raise InputError(f"labels must lie in [0, {k}), got range [{self.labels.min()}, {self.labels.max()}]")
        shifted = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1))
        self.probs = np.exp(shifted - lse[:, None])
        rows = np.arange(len(self.labels))
        return np.asarray(np.mean(lse - shifted[rows, self.labels]))

    def backward(self, gy):
        g = self.probs.copy()
        g[np.arange(len(self.labels)), self.labels] -= 1.0
        return g * (float(gy) / len(self.labels))


def cross_entropy(logits, labels) -> Tensor:
    return CrossEntropy(labels)(as_tensor(logits))


# ---------------------------------------------------------------------------
# AdamW


@dataclass
class AdamWState:
    lr: float = 1e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def to_tensors(self) -> dict[str, np.ndarray]:
        out = {"optim.step": np.array([float(self.step)])}
        for k in self.m:
            out[f"optim.m/{k}"] = self.m[k]
            out[f"optim.v/{k}"] = self.v[k]
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray], **hparams) -> "AdamWState":
        st = cls(**hparams)
        st.step = int(tensors["optim.step"][0]) if "optim.step" in tensors else 0
        for k, v in tensors.items():
            if k.startswith("optim.m/"):
                st.m[k[len("optim.m/") :]] = np.asarray(v, dtype=np.float64)
            elif k.startswith("optim.v/"):
                st.v[k[len("optim.v/") :]] = np.asarray(v, dtype=np.float64)
        return st


def adamw_step(
    weights: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamWState
) -> tuple[dict[str, Tensor], AdamWState]:
    """One decoupled-weight-decay Adam update. Returns fresh weight tensors; ``state`` is updated in place."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for tensor {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    out = {}
    for name, w in weights.items():
        g = grads.get(name)
        if g is None:
            out[name] = w
            continue
        if g.shape != w.shape:
            raise InputError(f"gradient shape {g.shape} != weight shape {w.shape} for {name!r}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        data = w.data * (1.0 - state.lr * state.weight_decay)
        data = data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        out[name] = Tensor(data, name=name)
    return out, state


# ---------------------------------------------------------------------------
# training loop


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-4
    weight_decay: float = 0.01
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    use_augmentation: bool = True
    max_steps: int | None = None
    eval_batch_size: int = 64
    # stop once validation accuracy reaches this value; None runs every epoch
    target_val_accuracy: float | None = None

    def __post_init__(self):
        if isinstance(self.augment, dict):
            object.__setattr__(self, "augment", AugmentConfig(**self.augment))
        if self.epochs < 1 or self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError("epochs and batch sizes must be positive")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be non-negative")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be positive when set")
        if self.target_val_accuracy is not None and not 0 < self.target_val_accuracy <= 1:
            raise ConfigError(f"target_val_accuracy must be in (0, 1], got {self.target_val_accuracy}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


class Dataset(Protocol):
    labels: np.ndarray

    def __len__(self) -> int: ...

    def batch(self, indices) -> tuple[np.ndarray, np.ndarray]: ...


@dataclass
class EpochRow:
    epoch: int
    split: str
    loss: float
    accuracy: float
    precision: float
    recall: float
    f1: float


METRICS_HEADER = ("epoch", "split", "loss", "accuracy", "precision", "recall", "f1")


@dataclass
class EvalResult:
    loss: float
    cm: ConfusionMatrix
    predictions: np.ndarray


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    state: AdamWState
    history: list[EpochRow]
    steps: int


class TrainingDiverged(NumericError):
    """Raised on a non-finite loss; carries the last finite parameters."""

    def __init__(self, message: str, result: TrainResult):
        super().__init__(message)
        self.result = result


def evaluate(cfg: ModelConfig, params: dict[str, Tensor], data: Dataset, batch_size: int = 64) -> EvalResult:
    n = len(data)
    if n == 0:
        raise InputError("cannot evaluate on an empty dataset")
    cm = ConfusionMatrix(cfg.num_classes)
    preds = np.empty(n, dtype=np.int64)
    total = 0.0
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(n, start + batch_size))
        x, y = data.batch(idx)
        logits = forward(cfg, params, x)
        total += cross_entropy(logits, y).item() * len(idx)
        p = np.argmax(logits.data, axis=1)
        preds[idx] = p
        cm.update(y, p)
    return EvalResult(total / n, cm, preds)


def _row(epoch: int, split: str, loss: float, cm: ConfusionMatrix) -> EpochRow:
    r = compute_metrics(cm)
    return EpochRow(epoch, split, loss, r.accuracy, r.precision, r.recall, r.f1)


def train(
    cfg: ModelConfig,
    train_data: Dataset,
    tcfg: TrainConfig,
    val_data: Dataset | None = None,
    params: dict[str, Tensor] | None = None,
    on_epoch: Callable[[int, list[EpochRow], dict[str, Tensor]], None] | None = None,
) -> TrainResult:
    """Train with AdamW; every random draw derives from ``tcfg.seed``."""
    n = len(train_data)
    if n == 0:
        raise InputError("training set is empty")
    root = RngState(tcfg.seed)
    if params is None:
        params = init_params(cfg, root.split("init"))
    shuffle_rng = root.split("shuffle")
    aug_rng = root.split("augment")
    state = AdamWState(lr=tcfg.lr, weight_decay=tcfg.weight_decay)
    history: list[EpochRow] = []
    steps = 0
    for epoch in range(1, tcfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        cm = ConfusionMatrix(cfg.num_classes)
        loss_sum, seen = 0.0, 0
        for start in range(0, n, tcfg.batch_size):
            idx = order[start : start + tcfg.batch_size]
            x, y = train_data.batch(idx)
            if tcfg.use_augmentation:
                x = np.stack([augment(img, aug_rng, tcfg.augment) for img in x])
            with GradTape() as tape:
                logits = forward(cfg, params, x)
                loss = cross_entropy(logits, y)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, step {steps + 1}",
                    TrainResult(params, state, history, steps),
                )
            grads = backward(tape, loss, params)
            params, state = adamw_step(params, grads, state)
            steps += 1
            loss_sum += value * len(idx)
            seen += len(idx)
            cm.update(y, np.argmax(logits.data, axis=1))
            if tcfg.max_steps is not None and steps >= tcfg.max_steps:
                break
        rows = [_row(epoch, "train", loss_sum / seen, cm)]
        if val_data is not None and len(val_data):
            ev = evaluate(cfg, params, val_data, tcfg.eval_batch_size)
            rows.append(_row(epoch, "val", ev.loss, ev.cm))
        history.extend(rows)
        log.info("epoch %d: %s", epoch, ", ".join(f"{r.split} loss={r.loss:.4f} acc={r.accuracy:.4f}" for r in rows))
        if on_epoch is not None:
            on_epoch(epoch, rows, params)
        if tcfg.max_steps is not None and steps >= tcfg.max_steps:
            break
        if tcfg.target_val_accuracy is not None and rows[-1].split == "val":
            if rows[-1].accuracy >= tcfg.target_val_accuracy:
                log.info("validation accuracy target %.4f reached at epoch %d", tcfg.target_val_accuracy, epoch)
                break
    return TrainResult(params, state, history, steps)
