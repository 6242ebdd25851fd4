"""Macro-F1 evaluation with an explicit confusion matrix.

Conventions (fixed so averages are stable across runs): 0/0 precision,
recall, or F1 counts as 0, and the macro average is the unweighted mean
over all classes, including classes with zero gold support.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricsReport:
    macro_f1: float
    per_class: List[ClassMetrics]
    confusion: np.ndarray  # rows gold, columns predicted
    accuracy: float


def macro_f1(gold, predicted, num_classes: int) -> MetricsReport:
    gold = np.asarray(gold)
    predicted = np.asarray(predicted)
    if gold.shape != predicted.shape:
        raise ValueError(f"macro_f1: {len(gold)} gold labels vs {len(predicted)} predictions")
    if len(gold) and (min(gold.min(), predicted.min()) < 0
                      or max(gold.max(), predicted.max()) >= num_classes):
        raise ValueError("macro_f1: label outside [0, num_classes)")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (gold, predicted), 1)
    per_class = []
    for c in range(num_classes):
        tp = confusion[c, c]
        support = int(confusion[c].sum())
        pred_c = int(confusion[:, c].sum())
        precision = tp / pred_c if pred_c else 0.0
        recall = tp / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class.append(ClassMetrics(precision, recall, f1, support))
    macro = float(np.mean([m.f1 for m in per_class]))
    accuracy = float(np.trace(confusion) / len(gold)) if len(gold) else 0.0
    return MetricsReport(macro_f1=macro, per_class=per_class, confusion=confusion, accuracy=accuracy)
