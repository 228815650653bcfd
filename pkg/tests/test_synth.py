"""Synthetic task generators, toy model training, and domain shifts."""
import numpy as np
import pytest

from shiftcal.calibration import predicted_classes, softmax
from shiftcal.synth import (
    SHIFT_KINDS,
    SegTaskSpec,
    ShiftSpec,
    TaskSpec,
    apply_confidence_gain,
    apply_feature_shift,
    apply_image_shift,
    classification_benchmark,
    frequency_confidence_gains,
    gen_classification_task,
    gen_segmentation_task,
    long_tailed_counts,
    predict_logits,
    segmentation_benchmark,
    softmax_regression_loss_grad,
    train_softmax_regression,
)
from shiftcal.segmentation import real_dsc
from shiftcal.validation import DataError


class TestLongTailedCounts:
    def test_ratio_one_is_uniform(self):
        assert long_tailed_counts(100, 2, 1.0) == (100, 100)

    def test_ratio_bounds(self):
        counts = long_tailed_counts(1000, 5, 100.0)
        assert counts[0] == 1000 and counts[-1] == 10
        assert all(a >= b for a, b in zip(counts, counts[1:]))

    def test_invalid_arguments_rejected(self):
        with pytest.raises(DataError):
            long_tailed_counts(100, 1, 2.0)
        with pytest.raises(DataError):
            long_tailed_counts(100, 3, 0.5)


class TestClassificationTask:
    def test_counts_match_spec_exactly(self):
        spec = TaskSpec(seed=0, class_counts=(1000, 10))
        task = gen_classification_task(spec)
        np.testing.assert_array_equal(np.bincount(task.train_labels), [1000, 10])
        np.testing.assert_array_equal(np.bincount(task.val_labels), [1000, 10])

    def test_balanced_prior(self):
        spec = TaskSpec(seed=1, class_counts=(100, 100))
        task = gen_classification_task(spec)
        assert np.bincount(task.val_labels).tolist() == [100, 100]

    def test_same_seed_is_bit_identical(self):
        spec = TaskSpec(seed=42, class_counts=(50, 20, 5))
        a = gen_classification_task(spec)
        b = gen_classification_task(spec)
        np.testing.assert_array_equal(a.train_features, b.train_features)
        np.testing.assert_array_equal(a.val_features, b.val_features)
        np.testing.assert_array_equal(a.class_means, b.class_means)

    def test_different_seeds_differ(self):
        a = gen_classification_task(TaskSpec(seed=1, class_counts=(50, 50)))
        b = gen_classification_task(TaskSpec(seed=2, class_counts=(50, 50)))
        assert not np.array_equal(a.train_features, b.train_features)


class TestSoftmaxRegression:
    def test_zero_steps_gives_uniform_predictions(self):
        gen = np.random.default_rng(0)
        feats = gen.standard_normal((20, 3))
        labels = gen.integers(0, 2, 20)
        model = train_softmax_regression(feats, labels, steps=0, class_count=2)
        assert np.all(model.weights == 0.0) and np.all(model.bias == 0.0)
        probs = softmax(predict_logits(model, feats))
        np.testing.assert_allclose(probs, 0.5, atol=1e-7)

    def test_linearly_separable_converges(self):
        gen = np.random.default_rng(1)
        feats = np.vstack([
            gen.standard_normal((100, 2)) + [4.0, 0.0],
            gen.standard_normal((100, 2)) + [-4.0, 0.0],
        ])
        labels = np.array([0] * 100 + [1] * 100)
        model = train_softmax_regression(feats, labels, steps=2000, rate=0.5)
        acc = np.mean(predict_logits(model, feats).argmax(axis=1) == labels)
        assert acc >= 0.99

    def test_single_class_rejected(self):
        with pytest.raises(DataError):
            train_softmax_regression(np.zeros((5, 2)), np.zeros(5, dtype=np.int64))

    def test_gradient_matches_finite_differences(self):
        gen = np.random.default_rng(2)
        feats = gen.standard_normal((5, 3))
        labels = gen.integers(0, 3, 5)
        w = gen.standard_normal((3, 3)) * 0.5
        b = gen.standard_normal(3) * 0.5
        _, gw, gb = softmax_regression_loss_grad(w, b, feats, labels)
        eps = 1e-4
        for i in range(3):
            for j in range(3):
                w[i, j] += eps
                up, _, _ = softmax_regression_loss_grad(w, b, feats, labels)
                w[i, j] -= 2 * eps
                down, _, _ = softmax_regression_loss_grad(w, b, feats, labels)
                w[i, j] += eps
                fd = (up - down) / (2 * eps)
                assert abs(gw[i, j] - fd) <= 1e-5 * max(1.0, abs(fd))
        for j in range(3):
            b[j] += eps
            up, _, _ = softmax_regression_loss_grad(w, b, feats, labels)
            b[j] -= 2 * eps
            down, _, _ = softmax_regression_loss_grad(w, b, feats, labels)
            b[j] += eps
            fd = (up - down) / (2 * eps)
            assert abs(gb[j] - fd) <= 1e-5 * max(1.0, abs(fd))

    def test_training_is_deterministic(self):
        gen = np.random.default_rng(3)
        feats = gen.standard_normal((30, 2))
        labels = gen.integers(0, 2, 30)
        a = train_softmax_regression(feats, labels, steps=50)
        b = train_softmax_regression(feats, labels, steps=50)
        np.testing.assert_array_equal(a.weights, b.weights)


class TestConfidenceGains:
    def test_monotone_in_frequency(self):
        gains = frequency_confidence_gains((1000, 316, 100, 31, 10))
        assert gains[0] == pytest.approx(1.6)
        assert gains[-1] == pytest.approx(0.35)
        assert all(a > b for a, b in zip(gains, gains[1:]))

    def test_gain_application_preserves_argmax(self):
        gen = np.random.default_rng(4)
        logits = gen.standard_normal((200, 5)).astype(np.float32)
        gains = frequency_confidence_gains((500, 100, 50, 20, 5))
        scaled = apply_confidence_gain(logits, gains)
        np.testing.assert_array_equal(
            predicted_classes(scaled), predicted_classes(logits)
        )

    def test_non_positive_gain_rejected(self):
        with pytest.raises(DataError):
            apply_confidence_gain(np.zeros((1, 2), dtype=np.float32), [1.0, 0.0])


class TestShifts:
    def test_magnitude_zero_is_identity_for_every_kind(self):
        gen = np.random.default_rng(5)
        feats = gen.standard_normal((40, 3)).astype(np.float32)
        labels = gen.integers(0, 2, 40)
        images = gen.standard_normal((2, 8, 8)).astype(np.float32)
        for kind in SHIFT_KINDS:
            if kind == "label_shift":
                shift = ShiftSpec(kind, 0.0, target_prior=(0.9, 0.1))
                new_feats, new_labels = apply_feature_shift(feats, labels, shift, 2)
                np.testing.assert_array_equal(np.sort(new_labels), np.sort(labels))
            elif kind == "blur":
                np.testing.assert_allclose(
                    apply_image_shift(images, ShiftSpec(kind, 0.0)), images, atol=1e-7
                )
            else:
                np.testing.assert_allclose(
                    apply_image_shift(images, ShiftSpec(kind, 0.0)), images, atol=1e-7
                )

    def test_gamma_fixes_constant_images(self):
        images = np.full((1, 4, 4), 0.7, dtype=np.float32)
        out = apply_image_shift(images, ShiftSpec("gamma", 1.0))
        np.testing.assert_allclose(out, images, atol=1e-7)

    def test_label_shift_quota_within_one(self):
        gen = np.random.default_rng(6)
        feats = gen.standard_normal((1000, 2)).astype(np.float32)
        labels = np.array([0] * 500 + [1] * 500)
        shift = ShiftSpec("label_shift", 1.0, target_prior=(0.9, 0.1))
        _, new_labels = apply_feature_shift(feats, labels, shift, 2)
        counts = np.bincount(new_labels, minlength=2)
        assert counts.sum() == 1000
        assert abs(counts[0] - 900) <= 1 and abs(counts[1] - 100) <= 1

    def test_label_shift_preserves_class_conditionals(self):
        gen = np.random.default_rng(7)
        feats = gen.standard_normal((200, 2)).astype(np.float32)
        labels = gen.integers(0, 2, 200)
        shift = ShiftSpec("label_shift", 0.7, target_prior=(0.8, 0.2))
        new_feats, new_labels = apply_feature_shift(feats, labels, shift, 2)
        originals = {tuple(row) for row in feats.tolist()}
        assert all(tuple(row) in originals for row in new_feats.tolist())

    def test_shapes_never_change(self):
        gen = np.random.default_rng(8)
        images = gen.standard_normal((3, 8, 8)).astype(np.float32)
        for kind in ("gamma", "blur", "contrast", "mean_shift", "feature_noise",
                     "feature_scale"):
            out = apply_image_shift(images, ShiftSpec(kind, 0.4))
            assert out.shape == images.shape

    def test_invalid_kind_rejected(self):
        with pytest.raises(DataError):
            ShiftSpec("rotate", 0.5)

    def test_label_shift_requires_target_prior(self):
        with pytest.raises(DataError):
            ShiftSpec("label_shift", 0.5)

    def test_blur_rejected_for_feature_vectors(self):
        with pytest.raises(DataError):
            apply_feature_shift(np.zeros((2, 2)), np.zeros(2, dtype=np.int64),
                                ShiftSpec("blur", 1.0))

    def test_label_shift_rejected_for_images(self):
        with pytest.raises(DataError):
            apply_image_shift(
                np.zeros((1, 4, 4)), ShiftSpec("label_shift", 0.5, target_prior=(1, 1))
            )

    def test_seeded_noise_is_reproducible(self):
        images = np.zeros((1, 4, 4), dtype=np.float32)
        a = apply_image_shift(images, ShiftSpec("feature_noise", 0.5, seed=9))
        b = apply_image_shift(images, ShiftSpec("feature_noise", 0.5, seed=9))
        np.testing.assert_array_equal(a, b)


class TestSegmentationTask:
    def test_reproducible_bit_exactly(self):
        a = gen_segmentation_task(SegTaskSpec(seed=5, train_cases=3, val_cases=3))
        b = gen_segmentation_task(SegTaskSpec(seed=5, train_cases=3, val_cases=3))
        np.testing.assert_array_equal(a.val_images, b.val_images)
        np.testing.assert_array_equal(a.model.weights, b.model.weights)

    def test_foreground_fraction_bounded(self):
        task = gen_segmentation_task(SegTaskSpec(seed=6))
        for masks in (task.train_masks, task.val_masks):
            fractions = masks.reshape(masks.shape[0], -1).mean(axis=1)
            assert np.all(fractions <= 0.05)

    def test_validation_dice_at_least_0_7(self):
        task = gen_segmentation_task(SegTaskSpec(seed=3))
        cases = task.build_cases(task.val_images, task.val_masks)
        dice = np.mean([real_dsc(case, 1) for case in cases])
        assert dice >= 0.7


class TestBenchmarks:
    def test_classification_benchmark_shape_and_determinism(self):
        val_a, targets_a = classification_benchmark(0, n_settings=4, max_count=300)
        val_b, targets_b = classification_benchmark(0, n_settings=4, max_count=300)
        assert len(targets_a) == 4
        np.testing.assert_array_equal(val_a.logits, val_b.logits)
        for (id_a, ps_a), (id_b, ps_b) in zip(targets_a, targets_b):
            assert id_a == id_b
            np.testing.assert_array_equal(ps_a.logits, ps_b.logits)
        kinds = {sid.rsplit("_", 1)[0] for sid, _ in targets_a}
        assert kinds == {"label_shift", "feature_noise"}

    def test_segmentation_benchmark_shape(self):
        val, targets = segmentation_benchmark(0, n_settings=6, val_cases=3,
                                              target_cases=2)
        assert len(val) == 3 and len(targets) == 6
        assert all(len(cases) == 2 for _, cases in targets)
        assert all(case.labels is not None for case in val)
