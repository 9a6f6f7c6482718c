"""Classification metrics: accuracy, macro F1, and the confusion matrix.

Convention: confusion rows are predicted classes, columns are ground
truth. Macro F1 is the unweighted mean of per-class F1 over classes that
appear in either the truth or the predictions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class MetricsReport:
    """Metrics of one model evaluated on one dataset."""

    n_classes: int
    n_samples: int
    accuracy: float
    macro_f1: float
    confusion: np.ndarray  # [pred, truth] counts
    per_class_f1: tuple

    def to_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "n_samples": self.n_samples,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "confusion_rows_pred_cols_truth": self.confusion.tolist(),
            "per_class_f1": list(self.per_class_f1),
        }


def confusion_matrix(truth: np.ndarray, pred: np.ndarray, n_classes: int) -> np.ndarray:
    """Counts with rows = predicted class, columns = true class."""
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if truth.shape != pred.shape:
        raise ValidationError(f"truth {truth.shape} and pred {pred.shape} differ")
    if truth.size == 0:
        raise ValidationError("cannot build a confusion matrix from no samples")
    for name, arr in (("truth", truth), ("pred", pred)):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise ValidationError(f"{name} labels outside 0..{n_classes - 1}")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (pred, truth), 1)
    return cm


def compute_metrics(truth, pred, n_classes: int) -> MetricsReport:
    cm = confusion_matrix(truth, pred, n_classes)
    n = int(cm.sum())
    accuracy = float(np.trace(cm)) / n

    f1s = []
    per_class = []
    for c in range(n_classes):
        tp = cm[c, c]
        fp = cm[c, :].sum() - tp  # predicted c, truth elsewhere
        fn = cm[:, c].sum() - tp  # truth c, predicted elsewhere
        if tp + fp + fn == 0:
            per_class.append(float("nan"))  # absent from truth and prediction
            continue
        f1 = 2.0 * tp / (2.0 * tp + fp + fn)
        f1s.append(f1)
        per_class.append(float(f1))
    if not f1s:
        raise ValidationError("no class present in truth or predictions")
    return MetricsReport(
        n_classes=n_classes,
        n_samples=n,
        accuracy=accuracy,
        macro_f1=float(np.mean(f1s)),
        confusion=cm,
        per_class_f1=tuple(per_class),
    )


def verify_report(report: MetricsReport, expected_samples: int) -> None:
    """Internal consistency checks; raises on violation."""
    cm = report.confusion
    if int(cm.sum()) != expected_samples:
        raise ValidationError(
            f"confusion total {int(cm.sum())} != dataset size {expected_samples}"
        )
    if report.n_samples != expected_samples:
        raise ValidationError("report sample count mismatch")
    acc = float(np.trace(cm)) / expected_samples
    if acc != report.accuracy:
        raise ValidationError("accuracy is not trace/total")
    if (cm < 0).any():
        raise ValidationError("negative confusion counts")


def confusion_csv(report: MetricsReport) -> str:
    """Confusion matrix as CSV text, rows = predicted, columns = truth."""
    n = report.n_classes
    lines = ["pred\\truth," + ",".join(str(c + 1) for c in range(n))]
    for r in range(n):
        lines.append(
            str(r + 1) + "," + ",".join(str(int(v)) for v in report.confusion[r])
        )
    return "\n".join(lines) + "\n"


def format_table(rows: list, headers: list) -> str:
    """Aligned text table from a list of row tuples."""
    cells = [[str(h) for h in headers]] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    out = []
    for i, row in enumerate(cells):
        out.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if i == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out) + "\n"
