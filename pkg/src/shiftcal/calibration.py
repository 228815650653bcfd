"""Confidence calibration and accuracy estimation under domain shift.

Implements class-agnostic and class-specific variants of temperature scaling,
difference of confidences, and average thresholded confidence, plus vector
scaling and the plain average-confidence baseline. Every estimator follows the
fit/estimate pattern: fit on a labeled validation PredictionSet, then estimate
accuracy on unlabeled target PredictionSets.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .tensor_io import PredictionSet
from .validation import DataError, check_logit_matrix

__all__ = [
    "T_MIN",
    "T_MAX",
    "METHOD_NAMES",
    "softmax",
    "predicted_classes",
    "accuracy",
    "ClasswiseStats",
    "classwise_stats",
    "AverageConfidence",
    "TemperatureScaling",
    "ConfidenceDifference",
    "ThresholdedConfidence",
    "VectorScaling",
    "make_estimator",
    "nll_and_grad",
    "NotFittedError",
]

T_MIN = 0.01
T_MAX = 1000.0


class NotFittedError(RuntimeError):
    """Estimator used before fit, or missing the needed fitted parameters."""


def softmax(logits, temperature=1.0) -> np.ndarray:
    """Row-wise softmax of [N, c] logits at the given temperature.

    `temperature` may be a positive scalar or a per-sample vector of length N.
    Computed with max-subtraction so large logits cannot overflow.
    """
    logits = np.asarray(logits, dtype=np.float64)
    t = np.asarray(temperature, dtype=np.float64)
    if np.any(t <= 0):
        raise ValueError("temperature must be positive")
    if t.ndim == 1:
        t = t[:, None]
    z = logits / t
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def predicted_classes(logits) -> np.ndarray:
    """Argmax class per row; ties break toward the lowest class index."""
    return np.argmax(np.asarray(logits), axis=1)


def accuracy(preds: PredictionSet) -> float:
    if preds.labels is None:
        raise DataError("accuracy requires labels")
    return float(np.mean(predicted_classes(preds.logits) == preds.labels))


@dataclass(frozen=True)
class ClasswiseStats:
    """Per-predicted-class sample counts, accuracies, and mean confidences.

    `accuracy[j]` is the fraction of samples predicted as class j whose true
    label is j (precision-style). Classes never predicted have count 0 and
    NaN accuracy/confidence with defined[j] == False.
    """

    counts: np.ndarray
    accuracy: np.ndarray
    overall_accuracy: float
    mean_confidence: np.ndarray
    defined: np.ndarray


def classwise_stats(preds: PredictionSet) -> ClasswiseStats:
    if preds.labels is None:
        raise DataError("classwise_stats requires labels")
    c = preds.class_count
    pred = predicted_classes(preds.logits)
    conf = softmax(preds.logits).max(axis=1)
    correct = pred == preds.labels
    counts = np.zeros(c, dtype=np.int64)
    acc = np.full(c, np.nan)
    mean_conf = np.full(c, np.nan)
    for j in range(c):
        mask = pred == j
        counts[j] = mask.sum()
        if counts[j] > 0:
            acc[j] = correct[mask].mean()
            mean_conf[j] = conf[mask].mean()
    return ClasswiseStats(
        counts=counts,
        accuracy=acc,
        overall_accuracy=float(correct.mean()),
        mean_confidence=mean_conf,
        defined=counts > 0,
    )


def _match_temperature(logits, target, t_min, t_max, tol, max_iter):
    """Find T with mean max softmax(z/T) == target by bisection.

    Mean max-probability is strictly decreasing in T whenever any row has
    non-identical logits, so the root is bracketed by checking the range
    bounds. Returns (T, fallback) where fallback means the target was
    unattainable and T clamps to the nearest bound.
    """

    def mean_conf(t):
        return float(softmax(logits, t).max(axis=1).mean())

    hi_val = mean_conf(t_min)  # sharpest -> largest confidence
    lo_val = mean_conf(t_max)  # softest -> smallest confidence
    if target >= hi_val:
        return t_min, True
    if target <= lo_val:
        return t_max, True
    lo, hi = t_min, t_max
    t = 1.0 if t_min < 1.0 < t_max else 0.5 * (t_min + t_max)
    for _ in range(max_iter):
        val = mean_conf(t)
        if abs(val - target) < tol:
            break
        if val > target:
            lo = t
        else:
            hi = t
        t = 0.5 * (lo + hi)
    return t, False


def _threshold_for_fraction(confidences, target) -> float:
    """Threshold t so the fraction of confidences strictly above t matches
    the target, via order statistics: k = round(n * target), t = (k+1)-th
    largest confidence. k == n -> 0, k == 0 -> 1."""
    conf = np.sort(np.asarray(confidences, dtype=np.float64))[::-1]
    n = conf.shape[0]
    k = int(round(n * target))
    if k >= n:
        return 0.0
    if k <= 0:
        return 1.0
    return float(conf[k])


class _CalibratedAccuracyEstimator(BaseEstimator):
    """Shared fit/estimate surface for all confidence-based estimators."""

    def fit(self, val: PredictionSet):
        raise NotImplementedError

    def calibrate(self, logits) -> np.ndarray:
        """Calibrated probability matrix for raw [N, c] logits."""
        raise NotImplementedError

    def estimate(self, target: PredictionSet) -> float:
        """Estimated accuracy on (possibly unlabeled) target data, in [0, 1]."""
        raise NotImplementedError

    def _check_fitted(self, attr):
        if not hasattr(self, attr):
            raise NotFittedError(f"{type(self).__name__} is not fitted")

    @staticmethod
    def _require_labels(val: PredictionSet):
        if val.labels is None:
            raise DataError("fitting requires validation labels")


class AverageConfidence(_CalibratedAccuracyEstimator):
    """Mean maximum softmax probability; the uncalibrated baseline."""

    method = "ac"

    def fit(self, val: PredictionSet):
        self.class_count_ = val.class_count
        return self

    def calibrate(self, logits):
        return softmax(check_logit_matrix(logits))

    def estimate(self, target: PredictionSet) -> float:
        return float(self.calibrate(target.logits).max(axis=1).mean())


class TemperatureScaling(_CalibratedAccuracyEstimator):
    """Temperature scaling matched to validation accuracy.

    Class-agnostic mode finds one T so mean max-probability equals overall
    validation accuracy. Class-specific mode (per_class=True) finds one T_j
    per predicted class matched to that class's validation accuracy; classes
    that are empty or whose target is unattainable fall back to the global T.
    """

    def __init__(self, per_class=False, t_min=T_MIN, t_max=T_MAX, tol=1e-6, max_iter=200):
        self.per_class = per_class
        self.t_min = t_min
        self.t_max = t_max
        self.tol = tol
        self.max_iter = max_iter

    @property
    def method(self):
        return "cs_ts" if self.per_class else "ts"

    def fit(self, val: PredictionSet):
        self._require_labels(val)
        stats = classwise_stats(val)
        c = val.class_count
        self.class_count_ = c
        global_t, global_fb = _match_temperature(
            val.logits, stats.overall_accuracy, self.t_min, self.t_max,
            self.tol, self.max_iter,
        )
        if not self.per_class:
            self.temperature_ = global_t
            self.fallback_used_ = global_fb
            return self
        pred = predicted_classes(val.logits)
        temps = np.full(c, global_t)
        fallback = np.zeros(c, dtype=bool)
        for j in range(c):
            mask = pred == j
            target = stats.accuracy[j]
            if not mask.any() or not (0.0 < target < 1.0):
                fallback[j] = True
                continue
            t_j, fb = _match_temperature(
                val.logits[mask], target, self.t_min, self.t_max,
                self.tol, self.max_iter,
            )
            temps[j] = t_j if not fb else global_t
            fallback[j] = fb
        self.temperature_ = temps
        self.fallback_used_ = fallback
        return self

    def _row_temperatures(self, logits):
        if self.per_class:
            return np.asarray(self.temperature_)[predicted_classes(logits)]
        return self.temperature_

    def calibrate(self, logits):
        self._check_fitted("temperature_")
        logits = check_logit_matrix(logits)
        return softmax(logits, self._row_temperatures(logits))

    def estimate(self, target: PredictionSet) -> float:
        return float(self.calibrate(target.logits).max(axis=1).mean())


class ConfidenceDifference(_CalibratedAccuracyEstimator):
    """Difference-of-confidences correction (DoC).

    Learns d = (validation mean max-probability) - (validation accuracy) and
    subtracts it from the predicted-class probability on target data, adding
    d/(c-1) to every other class so rows stay normalized. Class-specific mode
    learns one d_j per predicted class. Adjusted values are deliberately not
    clipped to [0, 1]; only the final accuracy estimate is clamped.
    """

    def __init__(self, per_class=False):
        self.per_class = per_class

    @property
    def method(self):
        return "cs_doc" if self.per_class else "doc"

    def fit(self, val: PredictionSet):
        self._require_labels(val)
        stats = classwise_stats(val)
        self.class_count_ = val.class_count
        conf = softmax(val.logits).max(axis=1)
        global_d = float(conf.mean() - stats.overall_accuracy)
        if not self.per_class:
            self.difference_ = global_d
            self.fallback_used_ = False
            return self
        diffs = np.full(val.class_count, global_d)
        fallback = ~stats.defined
        valid = stats.defined
        diffs[valid] = stats.mean_confidence[valid] - stats.accuracy[valid]
        self.difference_ = diffs
        self.fallback_used_ = fallback
        return self

    def _row_differences(self, pred):
        if self.per_class:
            return np.asarray(self.difference_)[pred]
        return np.full(pred.shape[0], self.difference_)

    def calibrate(self, logits):
        self._check_fitted("difference_")
        logits = check_logit_matrix(logits)
        probs = softmax(logits)
        pred = predicted_classes(logits)
        d = self._row_differences(pred)
        c = probs.shape[1]
        adjusted = probs + (d / (c - 1))[:, None]
        rows = np.arange(probs.shape[0])
        adjusted[rows, pred] = probs[rows, pred] - d
        return adjusted

    def estimate(self, target: PredictionSet) -> float:
        adjusted = self.calibrate(target.logits)
        rows = np.arange(adjusted.shape[0])
        pred = predicted_classes(target.logits)
        return float(np.clip(adjusted[rows, pred].mean(), 0.0, 1.0))


class ThresholdedConfidence(_CalibratedAccuracyEstimator):
    """Average thresholded confidence (ATC).

    Learns the threshold whose strict exceedance fraction on validation
    matches validation accuracy; the target estimate is the fraction of
    target confidences above it. per_class=True learns one threshold per
    predicted class against class-wise accuracy. on_calibrated=True first
    applies (class-specific, when per_class) temperature scaling and
    thresholds the calibrated confidences (TS-ATC / CS TS-ATC).
    """

    def __init__(self, per_class=False, on_calibrated=False):
        self.per_class = per_class
        self.on_calibrated = on_calibrated

    @property
    def method(self):
        base = "ts_atc" if self.on_calibrated else "atc"
        return f"cs_{base}" if self.per_class else base

    def _confidences(self, logits):
        if self.on_calibrated:
            return self.scaler_.calibrate(logits).max(axis=1)
        return softmax(logits).max(axis=1)

    def fit(self, val: PredictionSet):
        self._require_labels(val)
        stats = classwise_stats(val)
        c = val.class_count
        self.class_count_ = c
        if self.on_calibrated:
            self.scaler_ = TemperatureScaling(per_class=self.per_class).fit(val)
        conf = self._confidences(val.logits)
        global_t = _threshold_for_fraction(conf, stats.overall_accuracy)
        if not self.per_class:
            self.threshold_ = global_t
            self.fallback_used_ = False
            return self
        pred = predicted_classes(val.logits)
        thresholds = np.full(c, global_t)
        fallback = ~stats.defined
        for j in range(c):
            if stats.defined[j]:
                thresholds[j] = _threshold_for_fraction(
                    conf[pred == j], stats.accuracy[j]
                )
        self.threshold_ = thresholds
        self.fallback_used_ = fallback
        return self

    def _row_thresholds(self, pred):
        if self.per_class:
            return np.asarray(self.threshold_)[pred]
        return np.full(pred.shape[0], self.threshold_)

    def calibrate(self, logits):
        """Binarized pseudo-probabilities 1[p_ij > t], per the ATC rule."""
        self._check_fitted("threshold_")
        logits = check_logit_matrix(logits)
        probs = (
            self.scaler_.calibrate(logits) if self.on_calibrated else softmax(logits)
        )
        t = self._row_thresholds(predicted_classes(logits))
        return (probs > t[:, None]).astype(np.float64)

    def estimate(self, target: PredictionSet) -> float:
        self._check_fitted("threshold_")
        conf = self._confidences(target.logits)
        t = self._row_thresholds(predicted_classes(target.logits))
        return float(np.mean(conf > t))


def nll_and_grad(scale, bias, logits, labels):
    """Mean negative log-likelihood of softmax(scale * z + b) and its
    gradient with respect to (scale, bias)."""
    logits = np.asarray(logits, dtype=np.float64)
    scaled = scale[None, :] * logits + bias[None, :]
    probs = softmax(scaled)
    n = logits.shape[0]
    rows = np.arange(n)
    nll = -np.mean(np.log(probs[rows, labels] + 1e-300))
    delta = probs.copy()
    delta[rows, labels] -= 1.0
    grad_scale = (delta * logits).mean(axis=0)
    grad_bias = delta.mean(axis=0)
    return nll, grad_scale, grad_bias


class VectorScaling(_CalibratedAccuracyEstimator):
    """Per-class affine logit rescaling fit by likelihood.

    z_hat_ij = w_j * z_ij + b_j, with (w, b) found by full-batch gradient
    descent on the validation NLL (2000 steps, rate 0.01, w=1 / b=0 init).
    """

    method = "vs"

    def __init__(self, steps=2000, rate=0.01):
        self.steps = steps
        self.rate = rate

    def fit(self, val: PredictionSet):
        self._require_labels(val)
        c = val.class_count
        self.class_count_ = c
        w = np.ones(c)
        b = np.zeros(c)
        nll = None
        for _ in range(self.steps):
            nll, gw, gb = nll_and_grad(w, b, val.logits, val.labels)
            w -= self.rate * gw
            b -= self.rate * gb
        self.scale_ = w
        self.bias_ = b
        self.final_nll_, _, _ = nll_and_grad(w, b, val.logits, val.labels)
        self.fallback_used_ = False
        return self

    def calibrate(self, logits):
        self._check_fitted("scale_")
        logits = check_logit_matrix(logits).astype(np.float64)
        return softmax(self.scale_[None, :] * logits + self.bias_[None, :])

    def estimate(self, target: PredictionSet) -> float:
        return float(self.calibrate(target.logits).max(axis=1).mean())


METHOD_NAMES = (
    "ac", "ts", "vs", "doc", "atc", "ts_atc",
    "cs_ts", "cs_doc", "cs_atc", "cs_ts_atc",
)


def make_estimator(method: str) -> _CalibratedAccuracyEstimator:
    """Construct an unfitted accuracy estimator by method name."""
    registry = {
        "ac": lambda: AverageConfidence(),
        "ts": lambda: TemperatureScaling(),
        "cs_ts": lambda: TemperatureScaling(per_class=True),
        "vs": lambda: VectorScaling(),
        "doc": lambda: ConfidenceDifference(),
        "cs_doc": lambda: ConfidenceDifference(per_class=True),
        "atc": lambda: ThresholdedConfidence(),
        "cs_atc": lambda: ThresholdedConfidence(per_class=True),
        "ts_atc": lambda: ThresholdedConfidence(on_calibrated=True),
        "cs_ts_atc": lambda: ThresholdedConfidence(per_class=True, on_calibrated=True),
    }
    if method not in registry:
        raise ValueError(
            f"unknown method {method!r}; valid methods: {', '.join(METHOD_NAMES)}"
        )
    return registry[method]()
