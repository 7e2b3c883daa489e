"""Classification metrics: confusion matrix, weighted report, rendering."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import EmptyMatrixError, LabelOutOfRangeError, LengthMismatchError

MAX_NAME_WIDTH = 20


def confusion(true_labels, predicted_labels, n_classes: int) -> np.ndarray:
    """K×K count matrix with true classes on rows, predictions on columns."""
    true_labels = np.asarray(true_labels, dtype=np.int64)
    predicted_labels = np.asarray(predicted_labels, dtype=np.int64)
    if len(true_labels) != len(predicted_labels):
        raise LengthMismatchError(
            f"{len(true_labels)} true labels vs {len(predicted_labels)} predictions"
        )
    for name, arr in (("true", true_labels), ("predicted", predicted_labels)):
        if len(arr) and not (arr.min() >= 0 and arr.max() < n_classes):
            raise LabelOutOfRangeError(f"{name} labels must lie in [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (true_labels, predicted_labels), 1)
    return cm


@dataclass(frozen=True)
class MetricsReport:
    """Accuracy plus per-class and support-weighted precision/recall/F1.

    Weighted recall equals accuracy by construction: the per-class recalls
    weighted by true-class support telescope back to trace/total.
    """

    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float


def compute_report(cm: np.ndarray) -> MetricsReport:
    """Summarize a confusion matrix; zero-denominator metrics become 0."""
    cm = np.asarray(cm, dtype=np.int64)
    total = int(cm.sum())
    if total < 1:
        raise EmptyMatrixError("confusion matrix has zero total count")
    diag = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    recall = np.divide(diag, support, out=np.zeros_like(diag), where=support > 0)
    precision = np.divide(diag, predicted, out=np.zeros_like(diag), where=predicted > 0)
    pr_sum = precision + recall
    f1 = np.divide(2 * precision * recall, pr_sum, out=np.zeros_like(diag), where=pr_sum > 0)
    weights = support / total
    return MetricsReport(
        accuracy=float(diag.sum() / total),
        precision=precision,
        recall=recall,
        f1=f1,
        support=support,
        weighted_precision=float(weights @ precision),
        weighted_recall=float(weights @ recall),
        weighted_f1=float(weights @ f1),
    )


def _pct(x: float) -> str:
    return f"{100.0 * x:.2f}%"


def _clip_name(name: str) -> str:
    if len(name) <= MAX_NAME_WIDTH:
        return name
    return name[: MAX_NAME_WIDTH - 3] + "..."


def render_report(report: MetricsReport, class_names, cm: np.ndarray | None = None) -> str:
    """Fixed-width text table of the report, confusion matrix appended."""
    names = [_clip_name(n) for n in class_names]
    if len(names) != len(report.support):
        raise LengthMismatchError(f"{len(names)} class names for {len(report.support)} classes")
    name_w = max([len("class")] + [len(n) for n in names])
    lines = [f"{'class':<{name_w}}  {'precision':>9}  {'recall':>9}  {'f1':>9}  {'support':>7}"]
    for i, name in enumerate(names):
        lines.append(
            f"{name:<{name_w}}  {_pct(report.precision[i]):>9}  {_pct(report.recall[i]):>9}"
            f"  {_pct(report.f1[i]):>9}  {int(report.support[i]):>7}"
        )
    lines.append("")
    lines.append(f"accuracy           {_pct(report.accuracy)}")
    lines.append(f"weighted precision {_pct(report.weighted_precision)}")
    lines.append(f"weighted recall    {_pct(report.weighted_recall)}")
    lines.append(f"weighted f1        {_pct(report.weighted_f1)}")
    if cm is not None:
        cm = np.asarray(cm)
        cell_w = max(len(str(int(v))) for v in cm.flatten())
        cell_w = max(cell_w, *(len(n) for n in names))
        lines.append("")
        lines.append("confusion (rows=true, cols=predicted)")
        lines.append(f"{'':<{name_w}}  " + "  ".join(f"{n:>{cell_w}}" for n in names))
        for i, name in enumerate(names):
            lines.append(f"{name:<{name_w}}  " + "  ".join(f"{int(v):>{cell_w}}" for v in cm[i]))
    return "\n".join(lines) + "\n"


def report_to_dict(report: MetricsReport, class_names, cm: np.ndarray | None = None) -> dict:
    """JSON-friendly dict with per-class arrays plus aggregates."""
    doc = {
        "classes": list(class_names),
        "accuracy": report.accuracy,
        "per_class": {
            "precision": report.precision.tolist(),
            "recall": report.recall.tolist(),
            "f1": report.f1.tolist(),
            "support": report.support.tolist(),
        },
        "weighted": {
            "precision": report.weighted_precision,
            "recall": report.weighted_recall,
            "f1": report.weighted_f1,
        },
    }
    if cm is not None:
        doc["confusion"] = np.asarray(cm).tolist()
    return doc


def report_to_json(report: MetricsReport, class_names, cm: np.ndarray | None = None) -> str:
    return json.dumps(report_to_dict(report, class_names, cm), sort_keys=True, indent=2) + "\n"
