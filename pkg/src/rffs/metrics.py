"""Confusion matrices and per-class precision, recall, F1 and IoU."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # [C, C]; rows = true class, columns = predicted

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def column_normalized(self) -> np.ndarray:
        col = self.counts.sum(axis=0, keepdims=True)
        return np.divide(self.counts, col, out=np.zeros(self.counts.shape), where=col > 0)


@dataclass
class MetricsReport:
    class_names: tuple[str, ...]
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    iou: np.ndarray
    absent: np.ndarray  # classes with TP + FP + FN == 0
    oa: float
    mf1: float
    miou: float

    def to_dict(self) -> dict:
        return {
            "classes": [
                {"name": n, "precision": float(p), "recall": float(r), "f1": float(f), "iou": float(i),
                 "absent": bool(a)}
                for n, p, r, f, i, a in zip(self.class_names, self.precision, self.recall, self.f1,
                                            self.iou, self.absent)
            ],
            "oa": float(self.oa),
            "mf1": float(self.mf1),
            "miou": float(self.miou),
        }


def confusion(true_labels, pred_labels, num_classes: int) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(pred_labels, dtype=np.int64)
    if t.shape != p.shape:
        raise ValueError(f"{t.size} true labels but {p.size} predictions")
    if t.size == 0:
        raise ValueError("no labels to evaluate")
    for arr, what in ((t, "true"), (p, "predicted")):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise ValueError(f"{what} label outside [0, {num_classes})")
    counts = np.bincount(t * num_classes + p, minlength=num_classes * num_classes)
    return ConfusionMatrix(counts.reshape(num_classes, num_classes))


def _ratio(num, den):
    return np.divide(num, den, out=np.zeros(num.shape, dtype=np.float64), where=den > 0)


def per_class_metrics(cm: ConfusionMatrix, class_names: Sequence[str] | None = None) -> MetricsReport:
    """Precision, recall, F1 and IoU per class, plus OA, mF1 and mIoU.

    Zero denominators score 0.  Classes with no true or predicted points are
    flagged in ``absent`` and still count toward the means.
    """
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = _ratio(2 * precision * recall, precision + recall)
    iou = _ratio(tp, tp + fp + fn)
    names = tuple(class_names) if class_names is not None else tuple(f"class{i}" for i in range(len(tp)))
    total = c.sum()
    return MetricsReport(names, precision, recall, f1, iou, (tp + fp + fn) == 0,
                         float(tp.sum() / total) if total else 0.0, float(f1.mean()), float(iou.mean()))


def export_report(report: MetricsReport, path, fmt: str = "json") -> None:
    if fmt == "json":
        with open(path, "w") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    elif fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "precision", "recall", "f1", "iou"])
            for row in report.to_dict()["classes"]:
                w.writerow([row["name"]] + [f"{row[k]:.9g}" for k in ("precision", "recall", "f1", "iou")])
            w.writerow(["aggregate", f"{report.oa:.9g}", "", f"{report.mf1:.9g}", f"{report.miou:.9g}"])
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def export_confusion(cm: ConfusionMatrix, class_names: Sequence[str], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred", *class_names])
        for name, row in zip(class_names, cm.counts):
            w.writerow([name, *map(int, row)])
