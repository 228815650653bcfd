"""Versioned text serialization for fitted calibrators.

Lets `fit` and `estimate` run as separate CLI invocations. Floats are written
with repr() so values round-trip exactly.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .calibration import (
    AverageConfidence,
    ConfidenceDifference,
    TemperatureScaling,
    ThresholdedConfidence,
    VectorScaling,
    make_estimator,
)
from .segmentation import DiceEstimator
from .tensor_io import FormatError

__all__ = ["save_calibrator", "load_calibrator"]

_HEADER = "shiftcal-calibrator v1"


def _fmt_floats(values) -> str:
    arr = np.atleast_1d(np.asarray(values, dtype=np.float64))
    return ",".join(repr(float(v)) for v in arr)


def _fmt_flags(values) -> str:
    arr = np.atleast_1d(np.asarray(values, dtype=bool))
    return ",".join(str(int(v)) for v in arr)


def _parse_floats(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",")], dtype=np.float64)


def _parse_flags(text: str) -> np.ndarray:
    return np.array([bool(int(v)) for v in text.split(",")], dtype=bool)


def _scalar_or_vector(arr: np.ndarray):
    return float(arr[0]) if arr.shape[0] == 1 else arr


def save_calibrator(est, path) -> None:
    lines = [_HEADER]
    if isinstance(est, DiceEstimator):
        lines += [
            "task=seg",
            f"method={est.method}",
            f"class_count={est.class_count_}",
            f"background_class={est.background_class}",
        ]
        fg = est._foreground()
        lines.append("classes=" + ",".join(str(j) for j in fg))
        lines.append("dice_val=" + _fmt_floats([est.dice_val_[j] for j in fg]))
        if hasattr(est, "sdsc_val_"):
            lines.append("sdsc_val=" + _fmt_floats([est.sdsc_val_[j] for j in fg]))
        if hasattr(est, "temperature_"):
            lines.append("temperature=" + _fmt_floats(est.temperature_))
        if hasattr(est, "threshold_"):
            lines.append("threshold=" + _fmt_floats(est.threshold_))
        lines.append("fallback=" + _fmt_flags(est.fallback_used_))
    else:
        lines += [
            "task=cls",
            f"method={est.method}",
            f"class_count={est.class_count_}",
        ]
        if isinstance(est, TemperatureScaling):
            lines.append("temperature=" + _fmt_floats(est.temperature_))
        elif isinstance(est, ConfidenceDifference):
            lines.append("difference=" + _fmt_floats(est.difference_))
        elif isinstance(est, ThresholdedConfidence):
            if est.on_calibrated:
                lines.append("temperature=" + _fmt_floats(est.scaler_.temperature_))
            lines.append("threshold=" + _fmt_floats(est.threshold_))
        elif isinstance(est, VectorScaling):
            lines.append("scale=" + _fmt_floats(est.scale_))
            lines.append("bias=" + _fmt_floats(est.bias_))
        fallback = getattr(est, "fallback_used_", False)
        lines.append("fallback=" + _fmt_flags(fallback))
    Path(path).write_text("\n".join(lines) + "\n")


def load_calibrator(path):
    """Reconstruct a fitted estimator from a calibrator file.

    Returns (estimator, task) with task "cls" or "seg".
    """
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != _HEADER:
        raise FormatError(f"{path}: not a shiftcal calibrator file")
    fields: dict[str, str] = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    for key in ("task", "method", "class_count"):
        if key not in fields:
            raise FormatError(f"{path}: calibrator missing field {key!r}")
    task = fields["task"]
    method = fields["method"]
    class_count = int(fields["class_count"])
    if task == "seg":
        est = DiceEstimator(
            method=method, background_class=int(fields.get("background_class", 0))
        )
        est.class_count_ = class_count
        fg = [int(j) for j in fields["classes"].split(",")]
        dice = _parse_floats(fields["dice_val"])
        est.dice_val_ = {j: float(v) for j, v in zip(fg, dice)}
        if "sdsc_val" in fields:
            sdsc = _parse_floats(fields["sdsc_val"])
            est.sdsc_val_ = {j: float(v) for j, v in zip(fg, sdsc)}
        if "temperature" in fields:
            est.temperature_ = _parse_floats(fields["temperature"])
        if "threshold" in fields:
            est.threshold_ = _parse_floats(fields["threshold"])
        est.fallback_used_ = _parse_flags(fields["fallback"])
        return est, task
    if task != "cls":
        raise FormatError(f"{path}: unknown task {task!r}")
    est = make_estimator(method)
    est.class_count_ = class_count
    flags = _parse_flags(fields["fallback"])
    if isinstance(est, TemperatureScaling):
        est.temperature_ = _scalar_or_vector(_parse_floats(fields["temperature"]))
        est.fallback_used_ = flags if est.per_class else bool(flags[0])
    elif isinstance(est, ConfidenceDifference):
        est.difference_ = _scalar_or_vector(_parse_floats(fields["difference"]))
        est.fallback_used_ = flags if est.per_class else bool(flags[0])
    elif isinstance(est, ThresholdedConfidence):
        if est.on_calibrated:
            scaler = TemperatureScaling(per_class=est.per_class)
            scaler.class_count_ = class_count
            scaler.temperature_ = _scalar_or_vector(_parse_floats(fields["temperature"]))
            scaler.fallback_used_ = flags if est.per_class else bool(flags[0])
            est.scaler_ = scaler
        est.threshold_ = _scalar_or_vector(_parse_floats(fields["threshold"]))
        est.fallback_used_ = flags if est.per_class else bool(flags[0])
    elif isinstance(est, VectorScaling):
        est.scale_ = _parse_floats(fields["scale"])
        est.bias_ = _parse_floats(fields["bias"])
        est.fallback_used_ = bool(flags[0])
    elif isinstance(est, AverageConfidence):
        pass
    return est, task
