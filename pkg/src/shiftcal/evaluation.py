"""Benchmark harness: run estimator suites over many test settings and score
predicted vs. real performance with MAE (percentage points) and R2."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .calibration import accuracy, make_estimator
from .segmentation import SEG_METHOD_NAMES, DiceEstimator, real_dsc
from .tensor_io import concat_prediction_sets, load_manifest
from .validation import DataError

__all__ = [
    "mae",
    "r2",
    "ReportRow",
    "MethodSummary",
    "EstimateReport",
    "run_benchmark",
    "run_benchmark_manifests",
]


def mae(pred, real) -> tuple[float, float]:
    """Mean and population standard deviation of |pred - real| in percentage
    points."""
    pred = np.asarray(pred, dtype=np.float64)
    real = np.asarray(real, dtype=np.float64)
    if pred.shape != real.shape:
        raise DataError("pred and real must have equal length")
    if pred.size == 0:
        raise DataError("cannot compute MAE of empty lists")
    err = np.abs(pred - real) * 100.0
    return float(err.mean()), float(err.std())


def r2(pred, real) -> float:
    """Coefficient of determination 1 - SS_res/SS_tot about the mean of real."""
    pred = np.asarray(pred, dtype=np.float64)
    real = np.asarray(real, dtype=np.float64)
    if pred.shape != real.shape:
        raise DataError("pred and real must have equal length")
    if pred.size < 2:
        raise DataError("R2 needs at least 2 points")
    ss_tot = float(np.sum((real - real.mean()) ** 2))
    if ss_tot == 0.0:
        raise DataError("R2 undefined: real values are all identical")
    ss_res = float(np.sum((pred - real) ** 2))
    return 1.0 - ss_res / ss_tot


@dataclass(frozen=True)
class ReportRow:
    setting_id: str
    method: str
    predicted: float
    real: float | None  # None when the target has no labels


@dataclass(frozen=True)
class MethodSummary:
    method: str
    n: int
    mae_mean: float
    mae_std: float
    r2: float | None


@dataclass(frozen=True)
class EstimateReport:
    rows: tuple[ReportRow, ...]
    summaries: tuple[MethodSummary, ...]

    @classmethod
    def from_rows(cls, rows) -> "EstimateReport":
        rows = tuple(rows)
        methods = []
        for row in rows:
            if row.method not in methods:
                methods.append(row.method)
        summaries = []
        for method in methods:
            scored = [r for r in rows if r.method == method and r.real is not None]
            if not scored:
                continue
            pred = [r.predicted for r in scored]
            real = [r.real for r in scored]
            mean, std = mae(pred, real)
            try:
                score = r2(pred, real)
            except DataError:
                score = None
            summaries.append(MethodSummary(method, len(scored), mean, std, score))
        return cls(rows, tuple(summaries))

    def to_tsv(self) -> str:
        lines = ["setting_id\tmethod\tpredicted\treal"]
        for row in self.rows:
            real = "-" if row.real is None else repr(float(row.real))
            lines.append(f"{row.setting_id}\t{row.method}\t{float(row.predicted)!r}\t{real}")
        lines.append("")
        lines.append("method\tn\tmae_mean\tmae_std\tr2")
        for s in self.summaries:
            score = "-" if s.r2 is None else repr(float(s.r2))
            lines.append(f"{s.method}\t{s.n}\t{s.mae_mean!r}\t{s.mae_std!r}\t{score}")
        return "\n".join(lines) + "\n"

    def to_jsonl(self) -> str:
        lines = []
        for row in self.rows:
            lines.append(json.dumps({
                "setting_id": row.setting_id,
                "method": row.method,
                "predicted": row.predicted,
                "real": row.real,
            }))
        for s in self.summaries:
            lines.append(json.dumps({
                "summary": s.method,
                "n": s.n,
                "mae_mean": s.mae_mean,
                "mae_std": s.mae_std,
                "r2": s.r2,
            }))
        return "\n".join(lines) + "\n"

    def scatter(self, method: str) -> tuple[np.ndarray, np.ndarray]:
        """(predicted, real) pairs for one method, for plotting."""
        scored = [r for r in self.rows if r.method == method and r.real is not None]
        return (
            np.array([r.predicted for r in scored]),
            np.array([r.real for r in scored]),
        )


def _seg_real_performance(cases, foreground) -> float:
    return float(np.mean([
        np.mean([real_dsc(case, j) for case in cases]) for j in foreground
    ]))


def run_benchmark(val, targets, methods, task="cls") -> EstimateReport:
    """Fit each method once on validation, estimate on every target, and score
    against real performance where target labels exist.

    val: PredictionSet (cls) or list of SegCase (seg).
    targets: iterable of (setting_id, dataset) with datasets of the same kind.
    """
    methods = list(methods)
    if task == "cls":
        fitted = {m: make_estimator(m).fit(val) for m in methods}
    elif task == "seg":
        for m in methods:
            if m not in SEG_METHOD_NAMES:
                raise DataError(
                    f"method {m!r} cannot estimate DSC; valid: {', '.join(SEG_METHOD_NAMES)}"
                )
        fitted = {m: DiceEstimator(method=m).fit(val) for m in methods}
    else:
        raise DataError(f"unknown task {task!r}")
    rows = []
    for setting_id, data in targets:
        if task == "cls":
            real = accuracy(data) if data.labels is not None else None
            for m in methods:
                rows.append(ReportRow(setting_id, m, fitted[m].estimate(data), real))
        else:
            labeled = all(case.labels is not None for case in data)
            for m in methods:
                est = fitted[m]
                predicted = float(np.mean(list(est.estimate(data).values())))
                real = _seg_real_performance(data, est._foreground()) if labeled else None
                rows.append(ReportRow(setting_id, m, predicted, real))
    return EstimateReport.from_rows(rows)


def run_benchmark_manifests(val_path, target_paths, methods) -> EstimateReport:
    """run_benchmark over on-disk manifests; the validation manifest decides
    the task and every target must match it."""
    manifest, datasets = load_manifest(val_path)
    if manifest.role != "validation":
        raise DataError(f"{val_path}: expected a validation manifest")
    task = "cls" if manifest.task == "classification" else "seg"
    val = concat_prediction_sets(datasets) if task == "cls" else datasets
    targets = []
    for path in target_paths:
        t_manifest, t_data = load_manifest(path)
        if t_manifest.task != manifest.task:
            raise DataError(f"{path}: task mismatch with validation manifest")
        data = concat_prediction_sets(t_data) if task == "cls" else t_data
        targets.append((str(path), data))
    return run_benchmark(val, targets, methods, task=task)
