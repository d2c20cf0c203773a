"""Utility metrics: top-1 accuracy and class-balanced accuracy."""

from __future__ import annotations

import numpy as np


def _checked(predictions, labels) -> tuple[np.ndarray, np.ndarray]:
    preds = np.asarray(predictions, dtype=np.int64)
    labs = np.asarray(labels, dtype=np.int64)
    if preds.shape != labs.shape or preds.ndim != 1:
        raise ValueError("predictions and labels must be matching 1-d arrays")
    if preds.size == 0:
        raise ValueError("cannot score an empty evaluation set")
    return preds, labs


def mean_accuracy(predictions, labels) -> float:
    """Plain top-1 accuracy over the evaluation set."""
    preds, labs = _checked(predictions, labels)
    return float((preds == labs).mean())


def per_class_recall(predictions, labels, class_count: int) -> np.ndarray:
    """Recall per class; NaN where a class has no true examples."""
    preds, labs = _checked(predictions, labels)
    out = np.full(class_count, np.nan)
    for c in range(class_count):
        mask = labs == c
        if mask.any():
            out[c] = (preds[mask] == c).mean()
    return out


def zero_support_classes(labels, class_count: int) -> tuple[int, ...]:
    """Classes absent from the evaluation labels (excluded from balancing)."""
    labs = np.asarray(labels, dtype=np.int64)
    present = set(np.unique(labs).tolist())
    return tuple(c for c in range(class_count) if c not in present)


def balanced_accuracy(predictions, labels, class_count: int | None = None) -> float:
    """Unweighted mean of per-class recall over classes that appear."""
    preds, labs = _checked(predictions, labels)
    k = int(class_count) if class_count is not None else int(labs.max()) + 1
    recalls = per_class_recall(preds, labs, k)
    if np.all(np.isnan(recalls)):  # pragma: no cover - empty set already rejected
        raise ValueError("no class has any support")
    return float(np.nanmean(recalls))
