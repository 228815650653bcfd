"""Command-line entry point: fit, estimate, eval, and synth workflows.

Exit codes: 0 success, 1 usage error, 2 data error, 3 fit infeasible
(every class fell back to the global parameter).
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .calibration import METHOD_NAMES, make_estimator
from .evaluation import run_benchmark_manifests
from .segmentation import SEG_METHOD_NAMES, DiceEstimator
from .serialize import load_calibrator, save_calibrator
from .synth import classification_benchmark, segmentation_benchmark
from .tensor_io import FormatError, concat_prediction_sets, load_manifest, save_dataset
from .validation import DataError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INFEASIBLE = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; the CLI contract reserves 2 for data
    # errors, so route usage problems through exit code 1 instead.
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="shiftcal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a calibrator on a validation manifest")
    p_fit.add_argument("--method", required=True)
    p_fit.add_argument("--val", required=True, help="validation manifest path")
    p_fit.add_argument("--out", required=True, help="calibrator output path")
    p_fit.add_argument("--tol", type=float, default=1e-6,
                       help="bisection residual tolerance")

    p_est = sub.add_parser("estimate", help="estimate performance on a target manifest")
    p_est.add_argument("--target", required=True, help="target manifest path")
    p_est.add_argument("--cal", required=True, help="fitted calibrator path")

    p_eval = sub.add_parser("eval", help="benchmark methods over many targets")
    p_eval.add_argument("--val", required=True)
    p_eval.add_argument("--target", action="append", default=[],
                        help="target manifest (repeatable)")
    p_eval.add_argument("--targets-dir",
                        help="directory scanned for target_*/manifest.txt")
    p_eval.add_argument("--methods", default=None,
                        help="comma-separated method names (default: all for the task)")
    p_eval.add_argument("--out", required=True, help="report path prefix")

    p_synth = sub.add_parser("synth", help="materialize a synthetic benchmark")
    p_synth.add_argument("--task", choices=("cls", "seg"), required=True)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.add_argument("--n-targets", type=int, default=None)
    p_synth.add_argument("--classes", type=int, default=5)
    p_synth.add_argument("--imbalance", type=float, default=100.0)
    return parser


def _check_method(method, valid):
    if method not in valid:
        raise UsageError(
            f"unknown method {method!r}; valid methods: {', '.join(valid)}"
        )


def _cmd_fit(args) -> int:
    manifest, datasets = load_manifest(args.val)
    if manifest.role != "validation":
        raise DataError(f"{args.val}: fit requires a validation manifest")
    if manifest.task == "classification":
        _check_method(args.method, METHOD_NAMES)
        est = make_estimator(args.method)
        if hasattr(est, "tol"):
            est.tol = args.tol
        est.fit(concat_prediction_sets(datasets))
    else:
        _check_method(args.method, SEG_METHOD_NAMES)
        est = DiceEstimator(method=args.method).fit(datasets)
    fallback = np.atleast_1d(getattr(est, "fallback_used_", False))
    if fallback.size > 1 and fallback.all():
        print("fit infeasible: every class fell back to the global parameter",
              file=sys.stderr)
        return EXIT_INFEASIBLE
    save_calibrator(est, args.out)
    print(f"method={est.method}")
    for attr in ("temperature_", "difference_", "threshold_", "scale_", "bias_"):
        if hasattr(est, attr):
            value = np.atleast_1d(getattr(est, attr))
            print(f"{attr[:-1]}=" + ",".join(repr(float(v)) for v in value))
    print("fallback=" + ",".join(str(int(v)) for v in fallback))
    return EXIT_OK


def _cmd_estimate(args) -> int:
    est, cal_task = load_calibrator(args.cal)
    manifest, datasets = load_manifest(args.target)
    task = "cls" if manifest.task == "classification" else "seg"
    if task != cal_task:
        raise DataError(
            f"calibrator task {cal_task!r} does not match manifest task {task!r}"
        )
    if task == "cls":
        value = est.estimate(concat_prediction_sets(datasets))
    else:
        per_class = est.estimate(datasets)
        for j in sorted(per_class):
            print(f"estimate_class_{j}={per_class[j]:.4f}")
        value = float(np.mean(list(per_class.values())))
    print(f"estimate={value:.4f}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    targets = list(args.target)
    if args.targets_dir:
        targets += sorted(str(p) for p in Path(args.targets_dir).glob("target_*/manifest.txt"))
    if not targets:
        raise UsageError("no targets given; use --target or --targets-dir")
    manifest, _ = load_manifest(args.val)
    if args.methods:
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
        valid = METHOD_NAMES if manifest.task == "classification" else SEG_METHOD_NAMES
        for m in methods:
            _check_method(m, valid)
    else:
        methods = list(METHOD_NAMES if manifest.task == "classification" else SEG_METHOD_NAMES)
    report = run_benchmark_manifests(args.val, targets, methods)
    Path(f"{args.out}.tsv").write_text(report.to_tsv())
    Path(f"{args.out}.jsonl").write_text(report.to_jsonl())
    for s in report.summaries:
        r2_text = "-" if s.r2 is None else f"{s.r2:.3f}"
        print(f"{s.method}\tMAE {s.mae_mean:.2f} +/- {s.mae_std:.2f}\tR2 {r2_text}\tn={s.n}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    out = Path(args.out)
    if args.task == "cls":
        n = args.n_targets if args.n_targets is not None else 20
        val, targets = classification_benchmark(
            args.seed, class_count=args.classes, ratio=args.imbalance, n_settings=n
        )
        save_dataset(out / "validation", [val], "validation", "classification", args.classes)
        for k, (setting_id, preds) in enumerate(targets):
            save_dataset(out / f"target_{k:03d}", [preds], "target", "classification",
                         args.classes)
        settings = [sid for sid, _ in targets]
    else:
        n = args.n_targets if args.n_targets is not None else 12
        val, targets = segmentation_benchmark(args.seed, n_settings=n)
        save_dataset(out / "validation", val, "validation", "segmentation", 2)
        for k, (setting_id, cases) in enumerate(targets):
            save_dataset(out / f"target_{k:03d}", cases, "target", "segmentation", 2)
        settings = [sid for sid, _ in targets]
    (out / "settings.tsv").write_text(
        "\n".join(f"target_{k:03d}\t{sid}" for k, sid in enumerate(settings)) + "\n"
    )
    print(f"wrote {len(settings)} target manifests under {out}")
    return EXIT_OK


_COMMANDS = {
    "fit": _cmd_fit,
    "estimate": _cmd_estimate,
    "eval": _cmd_eval,
    "synth": _cmd_synth,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
