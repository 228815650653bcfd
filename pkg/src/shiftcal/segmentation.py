"""Dice score estimation for segmentation via soft Dice on calibrated probabilities.

The Dice estimator calibrates in two stages: the background class is matched
to its class-wise pixel accuracy (its soft Dice is always near 1 and cannot be
pushed down to the real value), then each foreground class is matched so that
validation soft Dice equals validation real Dice.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .calibration import (
    T_MAX,
    T_MIN,
    NotFittedError,
    TemperatureScaling,
    _match_temperature,
    _threshold_for_fraction,
    classwise_stats,
    predicted_classes,
    softmax,
)
from .tensor_io import PredictionSet, SegCase
from .validation import DataError

__all__ = [
    "SEG_METHOD_NAMES",
    "real_dsc",
    "soft_dsc",
    "DiceEstimator",
    "DiceReport",
]

SEG_METHOD_NAMES = ("ac", "cs_ts", "cs_atc", "cs_ts_atc", "cs_doc")


def real_dsc(case: SegCase, class_j: int) -> float:
    """Hard Dice 2|P∩G|/(|P|+|G|) between the argmax mask and ground truth
    for class j. Both masks empty -> 1; exactly one empty -> 0."""
    if case.labels is None:
        raise DataError("real_dsc requires labels")
    pred = predicted_classes(case.flat_logits()) == class_j
    truth = case.flat_labels() == class_j
    denom = pred.sum() + truth.sum()
    if denom == 0:
        return 1.0
    return float(2.0 * np.logical_and(pred, truth).sum() / denom)


def soft_dsc(cases, calibrated_probs, class_j: int) -> float:
    """Soft Dice averaged over cases: per case,
    2 * sum(1[raw argmax = j] * p_hat_j) / (|raw argmax = j| + sum(p_hat_j)).

    The indicator always uses the RAW argmax mask; only the probabilities are
    calibrated. A case with zero denominator contributes 1.
    """
    values = []
    for case, probs in zip(cases, calibrated_probs):
        mask = predicted_classes(case.flat_logits()) == class_j
        p = np.asarray(probs)[:, class_j]
        denom = mask.sum() + p.sum()
        values.append(1.0 if denom == 0 else 2.0 * p[mask].sum() / denom)
    # exact summation keeps the average invariant to case order
    return math.fsum(values) / len(values)


def _pooled_pixels(cases) -> PredictionSet:
    """All pixels of all cases as one flat PredictionSet."""
    logits = np.concatenate([c.flat_logits() for c in cases], axis=0)
    if all(c.labels is not None for c in cases):
        labels = np.concatenate([c.flat_labels() for c in cases])
    else:
        labels = None
    return PredictionSet(logits, labels)


@dataclass(frozen=True)
class DiceReport:
    """Per-class real and estimated Dice for one method."""

    method: str
    classes: tuple[int, ...]
    real: tuple  # per class: float or None
    estimated: tuple[float, ...]
    fallback: tuple[bool, ...]

    def to_tsv(self) -> str:
        lines = ["class\treal_dsc\testimated_dsc\tmethod\tfallback"]
        for j, r, e, f in zip(self.classes, self.real, self.estimated, self.fallback):
            real = "-" if r is None else repr(float(r))
            lines.append(f"{j}\t{real}\t{float(e)!r}\t{self.method}\t{int(f)}")
        return "\n".join(lines) + "\n"


class DiceEstimator(BaseEstimator):
    """Estimates per-foreground-class Dice on unlabeled target cases.

    method: one of ac, cs_ts, cs_atc, cs_ts_atc, cs_doc. Class 0 is treated
    as background. Temperature stage-2 fits use bisection with a grid
    fallback; threshold stage-2 fits scan a uniform grid over [0, 1].
    """

    def __init__(self, method="cs_atc", background_class=0,
                 temperature_grid=256, threshold_grid=1024):
        self.method = method
        self.background_class = background_class
        self.temperature_grid = temperature_grid
        self.threshold_grid = threshold_grid

    def _foreground(self):
        return [j for j in range(self.class_count_) if j != self.background_class]

    # ---- calibrated probabilities -------------------------------------

    def _ts_probs(self, case: SegCase, temperatures) -> np.ndarray:
        logits = case.flat_logits()
        t = np.asarray(temperatures)[predicted_classes(logits)]
        return softmax(logits, t)

    def _atc_probs(self, case: SegCase, thresholds, temperatures=None) -> np.ndarray:
        logits = case.flat_logits()
        if temperatures is not None:
            probs = self._ts_probs(case, temperatures)
        else:
            probs = softmax(logits)
        t = np.asarray(thresholds)[predicted_classes(logits)]
        return (probs > t[:, None]).astype(np.float64)

    def _calibrated_probs(self, case: SegCase) -> np.ndarray:
        if self.method in ("ac", "cs_doc"):
            return softmax(case.flat_logits())
        if self.method == "cs_ts":
            return self._ts_probs(case, self.temperature_)
        if self.method == "cs_atc":
            return self._atc_probs(case, self.threshold_)
        if self.method == "cs_ts_atc":
            return self._atc_probs(case, self.threshold_, self.temperature_)
        raise ValueError(f"unknown segmentation method {self.method!r}")

    # ---- fitting -------------------------------------------------------

    def _fit_background_temperature(self, pixels, stats):
        bg = self.background_class
        mask = predicted_classes(pixels.logits) == bg
        target = stats.accuracy[bg]
        if not mask.any() or not (0.0 < target < 1.0):
            return 1.0, True
        t, fb = _match_temperature(pixels.logits[mask], target, T_MIN, T_MAX, 1e-6, 200)
        return t, fb

    def _soft_dsc_at_temperature(self, cases, temps, j, t_j):
        temps = np.array(temps, dtype=np.float64)
        temps[j] = t_j
        probs = [self._ts_probs(c, temps) for c in cases]
        return soft_dsc(cases, probs, j)

    def _fit_foreground_temperature(self, cases, temps, j, target):
        """T_j matching soft Dice to the real class-j Dice. Soft Dice is
        monotone decreasing in T_j, so bisection applies; if the bracket
        check fails, fall back to a log-spaced grid scan."""
        f = lambda t: self._soft_dsc_at_temperature(cases, temps, j, t)
        hi_val = f(T_MIN)
        lo_val = f(T_MAX)
        if hi_val >= target >= lo_val:
            lo, hi = T_MIN, T_MAX
            t = 1.0
            for _ in range(200):
                val = f(t)
                if abs(val - target) < 1e-6:
                    break
                if val > target:
                    lo = t
                else:
                    hi = t
                t = 0.5 * (lo + hi)
            return t, False
        grid = np.geomspace(T_MIN, T_MAX, self.temperature_grid)
        errors = [abs(f(t) - target) for t in grid]
        return float(grid[int(np.argmin(errors))]), True

    def _fit_foreground_threshold(self, cases, thresholds, j, target, temps=None):
        """t_j minimizing |soft Dice - real Dice| over a uniform grid.

        Only the class-j entries of pixels predicted as j depend on t_j, so
        per case the counts over the grid reduce to a searchsorted against the
        sorted class-j probabilities inside the predicted mask.
        """
        grid = np.linspace(0.0, 1.0, self.threshold_grid)
        thresholds = np.asarray(thresholds, dtype=np.float64)
        sdsc = np.zeros((len(cases), grid.shape[0]))
        for z, case in enumerate(cases):
            logits = case.flat_logits()
            probs = (
                self._ts_probs(case, temps) if temps is not None else softmax(logits)
            )
            pred = predicted_classes(logits)
            mask = pred == j
            p_in = np.sort(probs[mask, j])
            # class-j entries of pixels predicted as other classes use their
            # own (already fixed) thresholds
            fixed_other = np.sum(probs[~mask, j] > thresholds[pred[~mask]])
            counts = p_in.shape[0] - np.searchsorted(p_in, grid, side="right")
            denom = mask.sum() + counts + fixed_other
            sdsc[z] = np.where(denom == 0, 1.0, 2.0 * counts / np.maximum(denom, 1))
        errors = np.abs(sdsc.mean(axis=0) - target)
        return float(grid[int(np.argmin(errors))]), False

    def fit(self, cases):
        cases = list(cases)
        if not cases:
            raise DataError("no validation cases")
        if any(c.labels is None for c in cases):
            raise DataError("fitting requires labeled validation cases")
        if self.method not in SEG_METHOD_NAMES:
            raise ValueError(
                f"unknown method {self.method!r}; valid: {', '.join(SEG_METHOD_NAMES)}"
            )
        c = cases[0].class_count
        self.class_count_ = c
        pixels = _pooled_pixels(cases)
        stats = classwise_stats(pixels)
        fg = self._foreground()
        if not any(
            np.any(predicted_classes(case.flat_logits()) == j) or np.any(case.flat_labels() == j)
            for case in cases for j in fg
        ):
            raise DataError("no foreground class present in any validation case")

        self.dice_val_ = {j: float(np.mean([real_dsc(case, j) for case in cases])) for j in fg}
        self.fallback_used_ = np.zeros(c, dtype=bool)

        if self.method == "ac":
            pass
        elif self.method == "cs_doc":
            raw = [softmax(case.flat_logits()) for case in cases]
            self.sdsc_val_ = {j: soft_dsc(cases, raw, j) for j in fg}
        elif self.method == "cs_ts":
            temps = np.ones(c)
            temps[self.background_class], fb = self._fit_background_temperature(pixels, stats)
            self.fallback_used_[self.background_class] = fb
            for j in fg:
                temps[j], fb = self._fit_foreground_temperature(
                    cases, temps, j, self.dice_val_[j]
                )
                self.fallback_used_[j] = fb
            self.temperature_ = temps
        elif self.method == "cs_atc":
            thresholds = np.full(c, 0.5)
            bg = self.background_class
            mask = predicted_classes(pixels.logits) == bg
            conf = softmax(pixels.logits).max(axis=1)
            if mask.any():
                thresholds[bg] = _threshold_for_fraction(conf[mask], stats.accuracy[bg])
            else:
                self.fallback_used_[bg] = True
            for j in fg:
                thresholds[j], fb = self._fit_foreground_threshold(
                    cases, thresholds, j, self.dice_val_[j]
                )
                self.fallback_used_[j] = fb
            self.threshold_ = thresholds
        elif self.method == "cs_ts_atc":
            # temperatures match per-class pixel accuracy (as in the
            # classification CS TS fit); the thresholds then carry the
            # Dice matching on the temperature-calibrated probabilities
            scaler = TemperatureScaling(per_class=True).fit(pixels)
            self.temperature_ = np.asarray(scaler.temperature_, dtype=np.float64)
            self.fallback_used_ |= np.asarray(scaler.fallback_used_)
            thresholds = np.full(c, 0.5)
            bg = self.background_class
            mask = predicted_classes(pixels.logits) == bg
            conf = np.concatenate(
                [self._ts_probs(case, self.temperature_).max(axis=1) for case in cases]
            )
            if mask.any():
                thresholds[bg] = _threshold_for_fraction(conf[mask], stats.accuracy[bg])
            else:
                self.fallback_used_[bg] = True
            for j in fg:
                thresholds[j], fb = self._fit_foreground_threshold(
                    cases, thresholds, j, self.dice_val_[j], temps=self.temperature_
                )
                self.fallback_used_[j] |= fb
            self.threshold_ = thresholds
        return self

    # ---- estimation ----------------------------------------------------

    def _check_fitted(self):
        if not hasattr(self, "class_count_"):
            raise NotFittedError("DiceEstimator is not fitted")

    def estimate_class(self, cases, class_j: int) -> float:
        """Estimated Dice for one foreground class on target cases, in [0, 1]."""
        self._check_fitted()
        cases = list(cases)
        if class_j not in self._foreground():
            raise DataError(f"class {class_j} is not a fitted foreground class")
        if self.method == "cs_doc":
            raw = [softmax(case.flat_logits()) for case in cases]
            target_sdsc = soft_dsc(cases, raw, class_j)
            value = self.dice_val_[class_j] - self.sdsc_val_[class_j] + target_sdsc
        else:
            probs = [self._calibrated_probs(case) for case in cases]
            value = soft_dsc(cases, probs, class_j)
        return float(np.clip(value, 0.0, 1.0))

    def estimate(self, cases) -> dict[int, float]:
        """Estimated Dice per foreground class."""
        self._check_fitted()
        cases = list(cases)
        return {j: self.estimate_class(cases, j) for j in self._foreground()}

    def report(self, cases) -> DiceReport:
        self._check_fitted()
        cases = list(cases)
        fg = self._foreground()
        labeled = all(case.labels is not None for case in cases)
        real = tuple(
            float(np.mean([real_dsc(case, j) for case in cases])) if labeled else None
            for j in fg
        )
        estimated = tuple(self.estimate_class(cases, j) for j in fg)
        fallback = tuple(bool(self.fallback_used_[j]) for j in fg)
        return DiceReport(self.method, tuple(fg), real, estimated, fallback)
