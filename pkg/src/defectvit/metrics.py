"""Confusion matrix and the six-score evaluation suite.

Accuracy, per-class and macro precision/recall/F1 from one-vs-rest
reductions, Cohen's kappa from observed-vs-chance agreement, and the
multiclass Matthews correlation coefficient computed from the full
matrix (it reduces to the familiar binary formula at C=2). Per-class
scores with an empty denominator are defined as 0, as is an MCC with a
zero factor under the root.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ContractError, DataError


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (C, C) int64; rows ground truth, columns prediction
    class_names: tuple[str, ...]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class PerClassScores:
    name: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricsReport:
    accuracy: float
    per_class: tuple[PerClassScores, ...]
    precision_macro: float
    recall_macro: float
    f1_macro: float
    cohen_kappa: float
    mcc: float


def confusion(labels: Sequence[int], predictions: Sequence[int], class_names: Sequence[str]) -> ConfusionMatrix:
    """Count matrix: counts[truth][prediction]."""
    labels = np.asarray(labels, dtype=int)
    predictions = np.asarray(predictions, dtype=int)
    if labels.shape != predictions.shape or labels.ndim != 1:
        raise ContractError(f"labels and predictions must be equal-length 1-d, got {labels.shape} and {predictions.shape}")
    c = len(class_names)
    counts = np.zeros((c, c), dtype=np.int64)
    for i, (t, p) in enumerate(zip(labels, predictions)):
        if not 0 <= t < c:
            raise DataError(f"label {t} out of range for {c} classes at index {i}")
        if not 0 <= p < c:
            raise DataError(f"prediction {p} out of range for {c} classes at index {i}")
        counts[t, p] += 1
    return ConfusionMatrix(counts=counts, class_names=tuple(class_names))


def binary_reduction(cm: ConfusionMatrix, c: int) -> tuple[int, int, int, int]:
    """One-vs-rest (TP, FP, FN, TN) for class c."""
    counts = cm.counts
    tp = int(counts[c, c])
    fp = int(counts[:, c].sum()) - tp
    fn = int(counts[c, :].sum()) - tp
    tn = cm.total - tp - fp - fn
    return tp, fp, fn, tn


def score(cm: ConfusionMatrix) -> MetricsReport:
    counts = cm.counts
    total = cm.total
    if total == 0:
        raise ContractError("cannot score an empty confusion matrix")
    accuracy = int(np.trace(counts)) / total

    per_class = []
    for c, name in enumerate(cm.class_names):
        tp, fp, fn, _ = binary_reduction(cm, c)
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        per_class.append(PerClassScores(name, precision, recall, f1, support=tp + fn))

    row_sums = [int(x) for x in counts.sum(axis=1)]
    col_sums = [int(x) for x in counts.sum(axis=0)]

    p_expected = sum(r * c for r, c in zip(row_sums, col_sums)) / (total * total)
    if p_expected == 1.0:
        # all mass in a single diagonal cell; agreement is perfect by construction
        kappa = 1.0
    else:
        kappa = (accuracy - p_expected) / (1.0 - p_expected)

    trace = int(np.trace(counts))
    num = trace * total - sum(r * c for r, c in zip(row_sums, col_sums))
    den_pred = total * total - sum(c * c for c in col_sums)
    den_true = total * total - sum(r * r for r in row_sums)
    mcc = num / (den_pred * den_true) ** 0.5 if den_pred > 0 and den_true > 0 else 0.0

    return MetricsReport(
        accuracy=accuracy,
        per_class=tuple(per_class),
        precision_macro=float(np.mean([p.precision for p in per_class])),
        recall_macro=float(np.mean([p.recall for p in per_class])),
        f1_macro=float(np.mean([p.f1 for p in per_class])),
        cohen_kappa=kappa,
        mcc=mcc,
    )


# ---------------------------------------------------------------------------
# artifacts

def format_scores(report: MetricsReport) -> str:
    """key=value text with repr-exact floats; parse_scores inverts it."""
    lines = [
        f"accuracy={report.accuracy!r}",
        f"recall_macro={report.recall_macro!r}",
        f"precision_macro={report.precision_macro!r}",
        f"f1_macro={report.f1_macro!r}",
        f"cohen_kappa={report.cohen_kappa!r}",
        f"mcc={report.mcc!r}",
    ]
    for p in report.per_class:
        lines.append(f"per_class.{p.name}.precision={p.precision!r}")
        lines.append(f"per_class.{p.name}.recall={p.recall!r}")
        lines.append(f"per_class.{p.name}.f1={p.f1!r}")
    return "\n".join(lines) + "\n"


def parse_scores(text: str) -> dict[str, float]:
    out: dict[str, float] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        out[key] = float(value)
    return out


def write_confusion_csv(cm: ConfusionMatrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["truth\\prediction", *cm.class_names])
        for name, row in zip(cm.class_names, cm.counts):
            writer.writerow([name, *[int(x) for x in row]])


def format_per_class_table(report: MetricsReport) -> str:
    width = max([len("class")] + [len(p.name) for p in report.per_class])
    header = f"{'class':<{width}}  precision  recall  f1      support"
    rows = [header, "-" * len(header)]
    for p in report.per_class:
        rows.append(f"{p.name:<{width}}  {p.precision:9.4f}  {p.recall:6.4f}  {p.f1:6.4f}  {p.support:7d}")
    return "\n".join(rows) + "\n"


def write_curves_csv(path, rows: Sequence[dict]) -> None:
    """Per-epoch series (epoch, train_loss, train_acc, val_loss, val_acc)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
        for row in rows:
            writer.writerow([
                row["epoch"],
                repr(row["train_loss"]), repr(row["train_acc"]),
                repr(row["val_loss"]), repr(row["val_acc"]),
            ])


def render_report(report: MetricsReport, cm: ConfusionMatrix, out_dir, curves: Optional[Sequence[dict]] = None) -> dict[str, Path]:
    """Write the machine-readable score file, per-class table, confusion CSV,
    and (when given) the per-epoch curve series; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "scores": out_dir / "scores.txt",
        "per_class": out_dir / "per_class.txt",
        "confusion": out_dir / "confusion.csv",
    }
    paths["scores"].write_text(format_scores(report), encoding="utf-8")
    paths["per_class"].write_text(format_per_class_table(report), encoding="utf-8")
    write_confusion_csv(cm, paths["confusion"])
    if curves is not None:
        paths["curves"] = out_dir / "curves.csv"
        write_curves_csv(paths["curves"], curves)
    return paths
