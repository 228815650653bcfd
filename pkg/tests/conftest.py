"""Shared builders for estimator tests."""
import numpy as np
import pytest

from shiftcal import PredictionSet


def logits_for_confidence(p, predicted=0, class_count=2):
    """One logit row whose softmax max-probability is exactly p at the
    predicted class (2-class closed form, padded with -inf-ish logits)."""
    if not 0.5 < p < 1.0:
        raise ValueError("confidence must lie in (0.5, 1)")
    row = np.full(class_count, -50.0, dtype=np.float64)
    other = 1 if predicted == 0 else 0
    row[predicted] = np.log(p / (1.0 - p))
    row[other] = 0.0
    return row


def prediction_set_from_confidences(confidences, correct, predicted=None,
                                    class_count=2):
    """PredictionSet with the given per-sample max-probabilities, predicted
    classes, and correctness pattern."""
    confidences = np.asarray(confidences, dtype=np.float64)
    correct = np.asarray(correct, dtype=bool)
    n = confidences.shape[0]
    predicted = np.zeros(n, dtype=np.int64) if predicted is None else np.asarray(predicted)
    logits = np.stack([
        logits_for_confidence(confidences[i], int(predicted[i]), class_count)
        for i in range(n)
    ])
    labels = np.where(
        correct, predicted, (predicted + 1) % class_count
    ).astype(np.int64)
    return PredictionSet(logits.astype(np.float32), labels)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_prediction_set(seed, n=400, c=5, scale=2.0, accuracy_boost=1.5):
    """Seeded random PredictionSet whose labels mostly agree with the argmax."""
    gen = np.random.default_rng(seed)
    logits = scale * gen.standard_normal((n, c))
    labels = logits.argmax(axis=1)
    flip = gen.random(n) < 0.25
    labels[flip] = gen.integers(0, c, flip.sum())
    rows = np.arange(n)
    logits[rows, labels] += gen.random(n) * accuracy_boost
    return PredictionSet(logits.astype(np.float32), labels.astype(np.int64))
