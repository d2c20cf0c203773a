"""Tests for accuracy and class-balanced accuracy helpers."""

import numpy as np
import pytest

from privatexr.metrics import (
    balanced_accuracy,
    mean_accuracy,
    per_class_recall,
    zero_support_classes,
)


def test_mean_accuracy_perfect():
    assert mean_accuracy([0, 1, 2, 1], [0, 1, 2, 1]) == 1.0


def test_mean_accuracy_half():
    assert mean_accuracy([0, 0, 1, 1], [0, 1, 1, 0]) == 0.5


def test_empty_inputs_rejected():
    with pytest.raises(ValueError, match="empty"):
        mean_accuracy([], [])


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="matching"):
        mean_accuracy([0, 1], [0, 1, 2])
    with pytest.raises(ValueError, match="matching"):
        balanced_accuracy(np.zeros((2, 2), dtype=int), np.zeros(4, dtype=int))


def test_balanced_accuracy_perfect():
    assert balanced_accuracy([2, 0, 1, 2], [2, 0, 1, 2]) == 1.0


def test_balanced_accuracy_hand_case():
    # class 0: both right (recall 1.0); class 1: one of two right (0.5)
    labels = [0, 0, 1, 1]
    preds = [0, 0, 1, 0]
    assert balanced_accuracy(preds, labels) == pytest.approx(0.75)
    assert mean_accuracy(preds, labels) == pytest.approx(0.75)


def test_balanced_accuracy_unbalanced_hand_case():
    # Class 1 is rare; plain accuracy hides its recall, balancing exposes it.
    labels = [0] * 9 + [1]
    preds = [0] * 10
    assert mean_accuracy(preds, labels) == pytest.approx(0.9)
    assert balanced_accuracy(preds, labels, class_count=2) == pytest.approx(0.5)


def test_random_predictions_near_chance():
    rng = np.random.default_rng(42)
    k, n = 4, 4000
    labels = np.repeat(np.arange(k), n // k)
    preds = rng.integers(0, k, size=n)
    assert abs(balanced_accuracy(preds, labels, k) - 1.0 / k) < 0.03
    assert abs(mean_accuracy(preds, labels) - 1.0 / k) < 0.03


def test_zero_support_class_excluded_from_balance():
    # class 2 never appears among the labels; the mean runs over classes 0, 1
    labels = [0, 0, 1, 1]
    preds = [0, 0, 1, 2]
    assert zero_support_classes(labels, 3) == (2,)
    assert balanced_accuracy(preds, labels, class_count=3) == pytest.approx(0.75)


def test_zero_support_classes_empty_when_all_present():
    assert zero_support_classes([0, 1, 2], 3) == ()


def test_per_class_recall_nan_pattern():
    labels = [0, 0, 3]
    preds = [0, 1, 3]
    rec = per_class_recall(preds, labels, 4)
    assert rec[0] == pytest.approx(0.5)
    assert np.isnan(rec[1]) and np.isnan(rec[2])
    assert rec[3] == pytest.approx(1.0)


def test_balanced_matches_mean_on_balanced_data():
    rng = np.random.default_rng(7)
    k, n = 4, 8000
    labels = np.repeat(np.arange(k), n // k)
    # biased predictor: right 60% of the time, uniform otherwise
    preds = np.where(rng.random(n) < 0.6, labels, rng.integers(0, k, size=n))
    assert abs(mean_accuracy(preds, labels) - balanced_accuracy(preds, labels, k)) < 0.02
