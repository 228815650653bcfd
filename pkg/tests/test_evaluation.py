"""MAE/R2 scoring and the benchmark harness."""
import json

import numpy as np
import pytest

from shiftcal import EstimateReport, mae, r2, run_benchmark, run_benchmark_manifests
from shiftcal.calibration import METHOD_NAMES, accuracy, classwise_stats, softmax
from shiftcal.evaluation import ReportRow
from shiftcal.synth import classification_benchmark, segmentation_benchmark
from shiftcal.tensor_io import PredictionSet, save_dataset
from shiftcal.validation import DataError

from conftest import random_prediction_set


class TestMae:
    def test_single_pair(self):
        assert mae([0.8], [0.7]) == pytest.approx((10.0, 0.0))

    def test_exact_match(self):
        assert mae([0.3, 0.9], [0.3, 0.9]) == (0.0, 0.0)

    def test_two_point_population_std(self):
        mean, std = mae([0.9, 0.6], [0.8, 0.8])
        assert mean == pytest.approx(15.0)
        assert std == pytest.approx(5.0)  # population, not sample, deviation

    def test_length_mismatch_and_empty_rejected(self):
        with pytest.raises(DataError):
            mae([0.5], [0.5, 0.6])
        with pytest.raises(DataError):
            mae([], [])


class TestR2:
    def test_perfect_prediction(self):
        assert r2([0.1, 0.5, 0.9], [0.1, 0.5, 0.9]) == 1.0

    def test_constant_mean_prediction_is_zero(self):
        assert r2([0.5, 0.5], [0.0, 1.0]) == pytest.approx(0.0)

    def test_anti_prediction(self):
        assert r2([1.0, 0.0], [0.0, 1.0]) == pytest.approx(-3.0)

    def test_degenerate_real_variance_rejected(self):
        with pytest.raises(DataError):
            r2([0.1, 0.2], [0.5, 0.5])
        with pytest.raises(DataError):
            r2([0.1], [0.5])


class TestEstimateReport:
    def _rows(self):
        return [
            ReportRow("s0", "ac", 0.8, 0.7),
            ReportRow("s1", "ac", 0.6, 0.65),
            ReportRow("s0", "ts", 0.75, 0.7),
            ReportRow("s1", "ts", 0.64, 0.65),
            ReportRow("s2", "ac", 0.5, None),
        ]

    def test_summaries_recomputed_from_rows(self):
        report = EstimateReport.from_rows(self._rows())
        for s in report.summaries:
            scored = [r for r in report.rows if r.method == s.method and r.real is not None]
            mean, std = mae([r.predicted for r in scored], [r.real for r in scored])
            assert (s.mae_mean, s.mae_std) == (mean, std)
            assert s.n == len(scored)

    def test_unlabeled_rows_excluded_from_summaries(self):
        with_unlabeled = EstimateReport.from_rows(self._rows())
        without = EstimateReport.from_rows(self._rows()[:4])
        assert with_unlabeled.summaries == without.summaries

    def test_tsv_and_jsonl_round_numbers(self):
        report = EstimateReport.from_rows(self._rows())
        tsv = report.to_tsv()
        assert tsv.startswith("setting_id\tmethod\tpredicted\treal")
        assert "\t-" in tsv  # unlabeled row
        parsed = [json.loads(line) for line in report.to_jsonl().splitlines()]
        rows = [p for p in parsed if "setting_id" in p]
        assert len(rows) == 5
        assert rows[0]["predicted"] == 0.8

    def test_scatter_pairs(self):
        report = EstimateReport.from_rows(self._rows())
        pred, real = report.scatter("ac")
        np.testing.assert_array_equal(pred, [0.8, 0.6])
        np.testing.assert_array_equal(real, [0.7, 0.65])


class TestRunBenchmark:
    def test_degenerate_benchmark_ac(self):
        val = random_prediction_set(0)
        report = run_benchmark(val, [("same", val)], ["ac"])
        row = report.rows[0]
        assert row.predicted == pytest.approx(
            softmax(val.logits).max(axis=1).mean()
        )
        assert row.real == pytest.approx(classwise_stats(val).overall_accuracy)

    def test_shape_contract_all_methods(self):
        val, targets = classification_benchmark(0, n_settings=20, max_count=200)
        report = run_benchmark(val, targets, METHOD_NAMES)
        assert len(report.rows) == 200
        assert len(report.summaries) == 10

    def test_unlabeled_target_changes_no_summary(self):
        val = random_prediction_set(1)
        t1 = random_prediction_set(2)
        t2 = PredictionSet(random_prediction_set(3).logits)  # labels dropped
        base = run_benchmark(val, [("a", t1)], ["ac", "doc"])
        extended = run_benchmark(val, [("a", t1), ("b", t2)], ["ac", "doc"])
        assert base.summaries == extended.summaries

    def test_target_order_permutes_rows_not_summaries(self):
        val = random_prediction_set(4)
        targets = [("a", random_prediction_set(5)), ("b", random_prediction_set(6))]
        fwd = run_benchmark(val, targets, ["ts", "atc"])
        rev = run_benchmark(val, targets[::-1], ["ts", "atc"])
        assert set(fwd.rows) == set(rev.rows)
        assert sorted(fwd.summaries, key=lambda s: s.method) == sorted(
            rev.summaries, key=lambda s: s.method
        )

    def test_cs_doc_summary_matches_hand_computation(self):
        val, targets = classification_benchmark(1, n_settings=6, max_count=200)
        report = run_benchmark(val, targets, ["cs_doc"])
        pred, real = report.scatter("cs_doc")
        mean, std = mae(pred, real)
        summary = report.summaries[0]
        assert summary.mae_mean == pytest.approx(mean)
        assert summary.mae_std == pytest.approx(std)

    def test_segmentation_task_accepts_only_dice_methods(self):
        val, targets = segmentation_benchmark(0, n_settings=2, val_cases=3,
                                              target_cases=2)
        with pytest.raises(DataError, match="DSC"):
            run_benchmark(val, targets, ["ts"], task="seg")
        report = run_benchmark(val, targets, ["ac", "cs_doc"], task="seg")
        assert len(report.rows) == 4
        assert all(0.0 <= row.predicted <= 1.0 for row in report.rows)

    def test_unknown_task_rejected(self):
        with pytest.raises(DataError):
            run_benchmark(random_prediction_set(0), [], ["ac"], task="qa")


class TestManifestBenchmark:
    def test_matches_in_memory_run(self, tmp_path):
        val, targets = classification_benchmark(2, n_settings=4, max_count=200)
        val_path = save_dataset(tmp_path / "val", [val], "validation",
                                "classification", 5)
        target_paths = []
        for k, (sid, ps) in enumerate(targets):
            p = save_dataset(tmp_path / f"t{k}", [ps], "target", "classification", 5)
            target_paths.append(p)
        from_disk = run_benchmark_manifests(val_path, target_paths, ["ts", "cs_atc"])
        in_memory = run_benchmark(
            val, [(str(p), ps) for p, (sid, ps) in zip(target_paths, targets)],
            ["ts", "cs_atc"],
        )
        for a, b in zip(from_disk.summaries, in_memory.summaries):
            assert a.method == b.method
            # on-disk float32 logits are bit-identical, so scores agree exactly
            assert a.mae_mean == pytest.approx(b.mae_mean, abs=1e-12)

    def test_target_role_required_for_validation_path(self, tmp_path):
        ps = random_prediction_set(7)
        path = save_dataset(tmp_path, [ps], "target", "classification", 5)
        with pytest.raises(DataError, match="validation"):
            run_benchmark_manifests(path, [], ["ac"])
