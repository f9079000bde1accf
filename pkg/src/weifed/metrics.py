"""Classification metrics: one-vs-rest F1 per class, macro F1, recall."""

from __future__ import annotations

import numpy as np


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Counts indexed ``[true, predicted]``."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def f1_from_counts(tp, fp, fn):
    """TP / (TP + (FP + FN) / 2); zero when the denominator vanishes."""
    denom = tp + 0.5 * (fp + fn)
    return np.where(denom > 0, tp / np.where(denom > 0, denom, 1.0), 0.0)


def per_class_f1(y_true, y_pred, n_classes: int) -> np.ndarray:
    cm = confusion_matrix(y_true, y_pred, n_classes)
    tp = np.diag(cm).astype(float)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    return f1_from_counts(tp, fp, fn)


def per_class_recall(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Recall per class; NaN for classes with no true samples."""
    cm = confusion_matrix(y_true, y_pred, n_classes)
    support = cm.sum(axis=1)
    out = np.full(n_classes, np.nan)
    present = support > 0
    out[present] = np.diag(cm)[present] / support[present]
    return out


def macro_f1(y_true, y_pred, n_classes: int) -> float:
    """Mean one-vs-rest F1 over the classes that occur in ``y_true``."""
    y_true = np.asarray(y_true, dtype=np.int64)
    if y_true.size == 0:
        raise ValueError("macro F1 of an empty label set is undefined")
    present = np.bincount(y_true, minlength=n_classes) > 0
    return float(per_class_f1(y_true, y_pred, n_classes)[present].mean())
