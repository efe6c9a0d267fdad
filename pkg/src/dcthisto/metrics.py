"""Confusion matrices, accuracy/precision/recall/F1, and seed aggregation.

Binary tasks report the positive class (index 1). Tasks with more classes
report the unweighted (macro) mean of one-vs-rest scores as the headline and
keep the support-weighted mean alongside.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import InputError

METRICS = ("accuracy", "precision", "recall", "f1")
_LABELS = {"accuracy": "Accuracy", "recall": "Recall", "precision": "Precision", "f1": "F1 score"}


class ConfusionMatrix:
    """``K x K`` counts; rows are true classes, columns are predictions."""

    def __init__(self, num_classes: int, counts: np.ndarray | None = None):
        if num_classes < 1:
            raise InputError(f"num_classes must be positive, got {num_classes}")
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64) if counts is None else counts

    def _check(self, label: int, what: str) -> int:
        label = int(label)
        if not 0 <= label < self.num_classes:
            raise InputError(f"{what} label {label} outside [0, {self.num_classes})")
        return label

    def accumulate(self, true_label: int, predicted_label: int) -> "ConfusionMatrix":
        t = self._check(true_label, "true")
        p = self._check(predicted_label, "predicted")
        self.counts[t, p] += 1
        return self

    def update(self, true_labels: Sequence[int], predicted_labels: Sequence[int]) -> "ConfusionMatrix":
        t = np.asarray(true_labels, dtype=np.int64)
        p = np.asarray(predicted_labels, dtype=np.int64)
        if t.shape != p.shape:
            raise InputError(f"label arrays differ in shape: {t.shape} vs {p.shape}")
        k = self.num_classes
        if t.size and (t.min() < 0 or t.max() >= k or p.min() < 0 or p.max() >= k):
            raise InputError(f"labels outside [0, {k})")
        np.add.at(self.counts, (t, p), 1)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise InputError("cannot merge confusion matrices of different sizes")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def trace(self) -> int:
        return int(np.trace(self.counts))

    def one_vs_rest(self, cls: int) -> tuple[int, int, int, int]:
        """``(tp, tn, fp, fn)`` treating ``cls`` as the positive class."""
        c = self.counts
        tp = int(c[cls, cls])
        fn = int(c[cls].sum()) - tp
        fp = int(c[:, cls].sum()) - tp
        tn = self.total - tp - fn - fp
        return tp, tn, fp, fn

    @classmethod
    def from_binary_counts(cls, tp: int, tn: int, fp: int, fn: int) -> "ConfusionMatrix":
        return cls(2, np.array([[tn, fp], [fn, tp]], dtype=np.int64))

    def __repr__(self):
        return f"ConfusionMatrix({self.counts.tolist()})"


def accumulate(cm: ConfusionMatrix, true_label: int, predicted_label: int) -> ConfusionMatrix:
    return cm.accumulate(true_label, predicted_label)


def _ratio(num: int, den: int, flag: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(flag)
        return 0.0
    return num / den


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class: list[dict[str, float]] = field(default_factory=list)
    weighted: dict[str, float] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    support: int = 0

    def as_dict(self) -> dict[str, float]:
        return {m: getattr(self, m) for m in METRICS}


def compute_metrics(cm: ConfusionMatrix) -> MetricsReport:
    if cm.total == 0:
        raise InputError("cannot compute metrics from an empty confusion matrix")
    flags: list[str] = []
    per_class = []
    for k in range(cm.num_classes):
        tp, tn, fp, fn = cm.one_vs_rest(k)
        p = _ratio(tp, tp + fp, f"precision_undefined[{k}]", flags)
        r = _ratio(tp, tp + fn, f"recall_undefined[{k}]", flags)
        per_class.append({"precision": p, "recall": r, "f1": _f1(p, r), "support": tp + fn})
    support = cm.counts.sum(axis=1)
    weights = support / support.sum()
    weighted = {m: float(sum(w * pc[m] for w, pc in zip(weights, per_class))) for m in ("precision", "recall", "f1")}
    accuracy = cm.trace / cm.total
    if cm.num_classes == 2:
        head = per_class[1]
    else:
        head = {m: float(np.mean([pc[m] for pc in per_class])) for m in ("precision", "recall", "f1")}
    return MetricsReport(
        accuracy=accuracy,
        precision=head["precision"],
        recall=head["recall"],
        f1=head["f1"],
        per_class=per_class,
        weighted=weighted,
        flags=flags,
        support=cm.total,
    )


def aggregate_seeds(reports: Sequence[MetricsReport | Mapping[str, float]], ddof: int = 0) -> dict[str, tuple[float, float]]:
    """Mean and standard deviation (population by default) of each metric."""
    if not reports:
        raise InputError("aggregate_seeds needs at least one report")
    rows = [r.as_dict() if isinstance(r, MetricsReport) else dict(r) for r in reports]
    out = {}
    for m in METRICS:
        vals = np.array([row[m] for row in rows], dtype=np.float64)
        std = float(vals.std(ddof=ddof)) if len(vals) > ddof else 0.0
        out[m] = (float(vals.mean()), std)
    return out


def format_pm(mean: float, std: float) -> str:
    """Percent presentation, e.g. ``0.96, 0.0048 -> '96.00 ± 0.48'``."""
    return f"{100 * mean:.2f} ± {100 * std:.2f}"


def format_table(values: Mapping[str, float | tuple[float, float]], title: str | None = None) -> str:
    """Two-column Metric/Value table in Accuracy, Recall, Precision, F1 order."""
    rows = []
    for m in ("accuracy", "recall", "precision", "f1"):
        v = values[m]
        rows.append((_LABELS[m], format_pm(*v) if isinstance(v, tuple) else f"{100 * v:.2f}"))
    width = max(len("Metric"), *(len(r[0]) for r in rows))
    lines = [title] if title else []
    lines.append(f"{'Metric':<{width}}  Value")
    lines.append("-" * (width + 2 + max(len("Value"), *(len(r[1]) for r in rows))))
    lines += [f"{name:<{width}}  {val}" for name, val in rows]
    return "\n".join(lines) + "\n"


def format_magnification_table(accuracy: Mapping[int, float | tuple[float, float]], method: str = "Ours") -> str:
    """One-row accuracy table over magnifications (40X, 100X, ...)."""
    mags = sorted(accuracy)
    cells = [format_pm(*accuracy[m]) if isinstance(accuracy[m], tuple) else f"{100 * accuracy[m]:.2f}" for m in mags]
    heads = [f"{m}X" for m in mags]
    widths = [max(len(h), len(c)) for h, c in zip(heads, cells)]
    mw = max(len("Methods"), len(method))
    line1 = f"{'Methods':<{mw}}  " + "  ".join(f"{h:>{w}}" for h, w in zip(heads, widths))
    line2 = f"{method:<{mw}}  " + "  ".join(f"{c:>{w}}" for c, w in zip(cells, widths))
    return line1 + "\n" + line2 + "\n"


def report_csv(values: Mapping[str, float | tuple[float, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    first = next(iter(values.values()))
    if isinstance(first, tuple):
        w.writerow(["metric", "mean", "std"])
        for m in METRICS:
            w.writerow([m, repr(values[m][0]), repr(values[m][1])])
    else:
        w.writerow(["metric", "value"])
        for m in METRICS:
            w.writerow([m, repr(values[m])])
    return buf.getvalue()
