"""Synthetic-shift laboratory: desk-scale imbalanced tasks, toy models, and
synthetic domain shifts for validating the estimators end to end.

All randomness flows from spec seeds through Philox4x64 counter-based
generators, so identical specs produce bit-identical outputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from .tensor_io import PredictionSet, SegCase
from .validation import DataError

__all__ = [
    "TaskSpec",
    "SegTaskSpec",
    "ShiftSpec",
    "SHIFT_KINDS",
    "long_tailed_counts",
    "gen_classification_task",
    "ClassificationTask",
    "SoftmaxModel",
    "train_softmax_regression",
    "softmax_regression_loss_grad",
    "predict_logits",
    "apply_feature_shift",
    "apply_image_shift",
    "gen_segmentation_task",
    "SegTask",
    "frequency_confidence_gains",
    "apply_confidence_gain",
    "classification_shift_settings",
    "classification_benchmark",
    "segmentation_shift_settings",
    "segmentation_benchmark",
]

SHIFT_KINDS = (
    "label_shift", "feature_noise", "feature_scale",
    "gamma", "blur", "contrast", "mean_shift",
)


def _rng(seed: int, stream: int = 0) -> np.random.Generator:
    # Philox4x64: counter-based, identical streams for identical keys.
    return np.random.Generator(np.random.Philox(key=[np.uint64(seed), np.uint64(stream)]))


def long_tailed_counts(max_count: int, class_count: int, ratio: float) -> tuple[int, ...]:
    """Exponentially decaying per-class counts with max/min ratio `ratio`."""
    if ratio < 1 or max_count < 1 or class_count < 2:
        raise DataError("need ratio >= 1, max_count >= 1, class_count >= 2")
    counts = [
        max(1, int(round(max_count * ratio ** (-j / (class_count - 1)))))
        for j in range(class_count)
    ]
    return tuple(counts)


@dataclass(frozen=True)
class TaskSpec:
    """Gaussian class-conditional classification task."""

    seed: int
    class_counts: tuple[int, ...]
    feature_dim: int = 8
    separation: float = 2.0
    noise: float = 1.0

    def __post_init__(self):
        if any(n < 1 for n in self.class_counts):
            raise DataError("class counts must be >= 1")
        if len(self.class_counts) < 2:
            raise DataError("need at least 2 classes")
        object.__setattr__(self, "class_counts", tuple(int(n) for n in self.class_counts))

    @property
    def class_count(self) -> int:
        return len(self.class_counts)

    @property
    def imbalance_ratio(self) -> float:
        return max(self.class_counts) / min(self.class_counts)


@dataclass(frozen=True)
class ClassificationTask:
    train_features: np.ndarray
    train_labels: np.ndarray
    val_features: np.ndarray
    val_labels: np.ndarray
    class_means: np.ndarray


def _sample_split(spec: TaskSpec, means: np.ndarray, stream: int):
    rng = _rng(spec.seed, stream)
    feats, labels = [], []
    for j, n in enumerate(spec.class_counts):
        feats.append(means[j] + spec.noise * rng.standard_normal((n, spec.feature_dim)))
        labels.append(np.full(n, j, dtype=np.int64))
    return (
        np.concatenate(feats).astype(np.float32),
        np.concatenate(labels),
    )


def gen_classification_task(spec: TaskSpec) -> ClassificationTask:
    """Deterministic imbalanced Gaussian task; train and validation splits are
    drawn from the same class-conditionals with the spec's exact counts."""
    rng = _rng(spec.seed, 0)
    directions = rng.standard_normal((spec.class_count, spec.feature_dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = spec.separation * directions
    train = _sample_split(spec, means, 1)
    val = _sample_split(spec, means, 2)
    return ClassificationTask(train[0], train[1], val[0], val[1], means)


@dataclass(frozen=True)
class SoftmaxModel:
    weights: np.ndarray  # [d, c]
    bias: np.ndarray  # [c]
    final_loss: float = float("nan")


def softmax_regression_loss_grad(weights, bias, features, labels):
    """Mean cross-entropy of softmax(X W + b) and its gradient."""
    features = np.asarray(features, dtype=np.float64)
    z = features @ weights + bias
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)
    n = features.shape[0]
    rows = np.arange(n)
    loss = -np.mean(np.log(probs[rows, labels] + 1e-300))
    delta = probs
    delta[rows, labels] -= 1.0
    grad_w = features.T @ delta / n
    grad_b = delta.mean(axis=0)
    return loss, grad_w, grad_b


def train_softmax_regression(features, labels, steps=2000, rate=0.5,
                             class_count=None) -> SoftmaxModel:
    """Full-batch gradient descent from zero weights; deterministic."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    c = int(labels.max()) + 1 if class_count is None else class_count
    if len(np.unique(labels)) < 2:
        raise DataError("training data must contain at least 2 classes")
    d = features.shape[1]
    w = np.zeros((d, c))
    b = np.zeros(c)
    loss = float("nan")
    for _ in range(steps):
        loss, gw, gb = softmax_regression_loss_grad(w, b, features, labels)
        w -= rate * gw
        b -= rate * gb
    if steps == 0:
        loss, _, _ = softmax_regression_loss_grad(w, b, features, labels)
    return SoftmaxModel(w, b, loss)


def predict_logits(model: SoftmaxModel, features) -> np.ndarray:
    return (np.asarray(features, dtype=np.float64) @ model.weights + model.bias).astype(
        np.float32
    )


@dataclass(frozen=True)
class ShiftSpec:
    """One synthetic domain shift. `target_prior` is only used by label_shift,
    where magnitude in [0, 1] interpolates from the empirical prior toward it."""

    kind: str
    magnitude: float
    seed: int = 0
    target_prior: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in SHIFT_KINDS:
            raise DataError(f"unknown shift kind {self.kind!r}; valid: {SHIFT_KINDS}")
        if self.kind == "label_shift":
            if self.target_prior is None:
                raise DataError("label_shift requires target_prior")
            if not 0.0 <= self.magnitude <= 1.0:
                raise DataError("label_shift magnitude must lie in [0, 1]")
            object.__setattr__(self, "target_prior", tuple(float(p) for p in self.target_prior))
        elif self.kind in ("feature_scale", "contrast") and self.magnitude <= -1.0:
            raise DataError(f"{self.kind} magnitude must exceed -1")
        elif self.kind == "blur" and self.magnitude < 0.0:
            raise DataError("blur magnitude must be >= 0")


def _largest_remainder_quota(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer quotas summing to `total`, proportional to weights."""
    weights = np.asarray(weights, dtype=np.float64)
    weights = weights / weights.sum()
    raw = weights * total
    quota = np.floor(raw).astype(np.int64)
    remainder = raw - quota
    # ties broken toward the lowest class index via stable sort
    order = np.argsort(-remainder, kind="stable")
    for idx in order[: total - quota.sum()]:
        quota[idx] += 1
    return quota


def _resample_label_shift(labels: np.ndarray, shift: ShiftSpec, class_count: int):
    """Deterministic quota resampling toward the target prior. Only
    subsamples/duplicates indices, so class-conditionals are untouched.
    Returns resampled indices, grouped by class in ascending class order."""
    counts = np.bincount(labels, minlength=class_count).astype(np.float64)
    empirical = counts / counts.sum()
    target = np.asarray(shift.target_prior, dtype=np.float64)
    if target.shape[0] != class_count:
        raise DataError("target_prior length must equal class count")
    prior = (1.0 - shift.magnitude) * empirical + shift.magnitude * (target / target.sum())
    prior = prior * (counts > 0)  # cannot synthesize absent classes
    quota = _largest_remainder_quota(prior, labels.shape[0])
    indices = []
    for j in range(class_count):
        avail = np.flatnonzero(labels == j)
        if quota[j] == 0:
            continue
        reps = -(-quota[j] // avail.shape[0])  # ceil
        indices.append(np.tile(avail, reps)[: quota[j]])
    return np.concatenate(indices)


def _intensity_transform(x: np.ndarray, shift: ShiftSpec) -> np.ndarray:
    m = shift.magnitude
    if m == 0.0 and shift.kind != "blur":
        return x.copy()
    if shift.kind == "feature_noise":
        rng = _rng(shift.seed, 7)
        return x + m * rng.standard_normal(x.shape)
    if shift.kind == "feature_scale":
        return x * (1.0 + m)
    if shift.kind == "mean_shift":
        return x + m
    if shift.kind == "contrast":
        mean = x.mean()
        return (x - mean) * (1.0 + m) + mean
    if shift.kind == "gamma":
        lo, hi = x.min(), x.max()
        if hi - lo < 1e-12:
            return x.copy()
        unit = (x - lo) / (hi - lo)
        return unit ** (1.0 + m) * (hi - lo) + lo
    raise DataError(f"shift kind {shift.kind!r} not valid here")


def apply_feature_shift(features, labels, shift: ShiftSpec, class_count=None):
    """Shift a classification dataset; returns new (features, labels)."""
    features = np.asarray(features, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if shift.kind == "blur":
        raise DataError("blur applies to images, not feature vectors")
    if shift.kind == "label_shift":
        c = class_count or int(labels.max()) + 1
        idx = _resample_label_shift(labels, shift, c)
        return features[idx].copy(), labels[idx].copy()
    return _intensity_transform(features.astype(np.float64), shift).astype(np.float32), labels.copy()


def apply_image_shift(images, shift: ShiftSpec) -> np.ndarray:
    """Shift a stack of images [Z, H, W]; shapes are preserved."""
    images = np.asarray(images, dtype=np.float64)
    if shift.kind == "label_shift":
        raise DataError("label_shift applies to classification datasets only")
    if shift.kind == "blur":
        if shift.magnitude == 0.0:
            return images.astype(np.float32)
        out = np.stack([gaussian_filter(img, sigma=shift.magnitude) for img in images])
        return out.astype(np.float32)
    return _intensity_transform(images, shift).astype(np.float32)


@dataclass(frozen=True)
class SegTaskSpec:
    """Toy 2D segmentation task: one Gaussian-blob foreground per case over a
    noisy background, with extreme foreground/background imbalance."""

    seed: int
    train_cases: int = 10
    val_cases: int = 12
    image_size: int = 64
    fg_contrast: float = 1.6
    noise: float = 0.45
    max_fg_fraction: float = 0.05
    # trained logits are sharpened by this factor so the toy segmenter is
    # overconfident, like the deep networks it stands in for
    overconfidence: float = 6.0

    def __post_init__(self):
        if self.train_cases < 1 or self.val_cases < 1:
            raise DataError("need at least one case per split")
        if not 0.0 < self.max_fg_fraction <= 0.05:
            raise DataError("max_fg_fraction must lie in (0, 0.05]")


@dataclass(frozen=True)
class SegTask:
    train_images: np.ndarray
    train_masks: np.ndarray
    val_images: np.ndarray
    val_masks: np.ndarray
    model: SoftmaxModel

    def build_cases(self, images, masks=None) -> list[SegCase]:
        """Per-pixel logits for (possibly shifted) images, as SegCases."""
        cases = []
        for z in range(images.shape[0]):
            feats = images[z].reshape(-1, 1)
            logits = predict_logits(self.model, feats).T.reshape(
                2, *images[z].shape
            )
            labels = None if masks is None else masks[z]
            cases.append(SegCase(logits, labels))
        return cases


def _gen_seg_split(spec: SegTaskSpec, n_cases: int, stream: int):
    rng = _rng(spec.seed, stream)
    s = spec.image_size
    max_radius = int(np.floor(s * np.sqrt(spec.max_fg_fraction / np.pi)))
    images = np.empty((n_cases, s, s), dtype=np.float32)
    masks = np.empty((n_cases, s, s), dtype=np.int64)
    yy, xx = np.mgrid[0:s, 0:s]
    for z in range(n_cases):
        radius = rng.integers(max(3, max_radius // 2), max_radius + 1)
        cy = rng.integers(radius + 1, s - radius - 1)
        cx = rng.integers(radius + 1, s - radius - 1)
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
        img = spec.noise * rng.standard_normal((s, s))
        img[mask] += spec.fg_contrast
        images[z] = img
        masks[z] = mask
    return images, masks


def gen_segmentation_task(spec: SegTaskSpec) -> SegTask:
    """Deterministic toy segmentation task with a trained per-pixel
    intensity-based logistic segmenter."""
    train_images, train_masks = _gen_seg_split(spec, spec.train_cases, 11)
    val_images, val_masks = _gen_seg_split(spec, spec.val_cases, 12)
    feats = train_images.reshape(-1, 1)
    labels = train_masks.reshape(-1)
    model = train_softmax_regression(feats, labels, steps=300, rate=1.0, class_count=2)
    model = SoftmaxModel(
        model.weights * spec.overconfidence,
        model.bias * spec.overconfidence,
        model.final_loss,
    )
    return SegTask(train_images, train_masks, val_images, val_masks, model)


def frequency_confidence_gains(class_counts, low: float = 0.35, high: float = 1.6,
                               power: float = 0.5) -> np.ndarray:
    """Per-class logit gains decreasing with class rarity.

    Models trained on long-tailed data are sharply overconfident on head
    classes and underconfident on tail classes; a linear toy model trained
    to convergence does not develop this on its own, so the benchmark
    injects it. Gains interpolate from `high` (most frequent class) down to
    `low` (rarest class) along a power curve of relative frequency.
    """
    counts = np.asarray(class_counts, dtype=np.float64)
    if counts.min() <= 0:
        raise DataError("class counts must be positive")
    rel = (counts / counts.max()) ** power
    lo = rel.min()
    if counts.max() == counts.min():
        return np.full(counts.shape, high)
    return low + (high - low) * (rel - lo) / (1.0 - lo)


def apply_confidence_gain(logits, gains) -> np.ndarray:
    """Scale each logit row by the gain of its predicted class.

    Positive scaling never changes the row argmax, so this only sharpens or
    softens confidence, never the decisions.
    """
    logits = np.asarray(logits, dtype=np.float32)
    gains = np.asarray(gains, dtype=np.float64)
    if np.any(gains <= 0):
        raise DataError("confidence gains must be positive")
    pred = logits.argmax(axis=1)
    return (logits * gains[pred][:, None]).astype(np.float32)


def classification_shift_settings(class_count: int, n_settings: int,
                                  seed: int = 0) -> list[ShiftSpec]:
    """A deterministic ramp of label-shift and feature-noise settings.

    Label shifts tilt the prior toward one class (rarest classes first) with
    increasing strength; feature-noise settings ramp the noise magnitude.
    """
    settings = []
    for k in range(n_settings):
        if k % 2 == 0:
            focus = (class_count - 1) - (k // 2) % class_count
            prior = np.full(class_count, 1.0)
            prior[focus] = 5.0
            settings.append(ShiftSpec(
                kind="label_shift",
                magnitude=0.3 + 0.4 * k / max(1, n_settings - 1),
                seed=seed + k,
                target_prior=tuple(prior / prior.sum()),
            ))
        else:
            settings.append(ShiftSpec(
                kind="feature_noise",
                magnitude=0.2 + 1.0 * k / max(1, n_settings - 1),
                seed=seed + k,
            ))
    return settings


def classification_benchmark(seed: int, class_count: int = 5, ratio: float = 100.0,
                             max_count: int = 3000, n_settings: int = 20,
                             train_steps: int = 300, separation: float = 3.5):
    """Imbalanced toy classification benchmark: a validation PredictionSet and
    shifted labeled target PredictionSets, all from one trained toy model with
    frequency-dependent confidence gains applied to its logits."""
    spec = TaskSpec(
        seed=seed,
        class_counts=long_tailed_counts(max_count, class_count, ratio),
        separation=separation,
    )
    task = gen_classification_task(spec)
    model = train_softmax_regression(
        task.train_features, task.train_labels, steps=train_steps, rate=0.5,
        class_count=class_count,
    )
    gains = frequency_confidence_gains(spec.class_counts)
    val = PredictionSet(
        apply_confidence_gain(predict_logits(model, task.val_features), gains),
        task.val_labels,
    )
    targets = []
    for k, shift in enumerate(classification_shift_settings(class_count, n_settings, seed)):
        rng_stream = 100 + k
        feats, labels = _sample_split(spec, task.class_means, rng_stream)
        feats, labels = apply_feature_shift(feats, labels, shift, class_count)
        preds = PredictionSet(
            apply_confidence_gain(predict_logits(model, feats), gains), labels
        )
        targets.append((f"{shift.kind}_{k:03d}", preds))
    return val, targets


def segmentation_shift_settings(n_settings: int, seed: int = 0) -> list[ShiftSpec]:
    """Intensity/noise/scale shift ramp for the toy segmentation task."""
    kinds = ("gamma", "mean_shift", "contrast", "feature_noise", "blur", "feature_scale")
    magnitudes = {
        "gamma": (0.2, 0.5),
        "mean_shift": (-0.1, -0.3),
        "contrast": (-0.15, -0.4),
        "feature_noise": (0.15, 0.4),
        "blur": (0.6, 1.4),
        "feature_scale": (-0.15, -0.35),
    }
    settings = []
    for k in range(n_settings):
        kind = kinds[k % len(kinds)]
        lo, hi = magnitudes[kind]
        frac = (k // len(kinds)) / max(1, (n_settings - 1) // len(kinds))
        settings.append(ShiftSpec(kind=kind, magnitude=lo + (hi - lo) * frac, seed=seed + k))
    return settings


def segmentation_benchmark(seed: int, n_settings: int = 12, val_cases: int = 12,
                           target_cases: int = 8):
    """Toy segmentation benchmark: labeled validation SegCases and shifted
    labeled target case lists from one trained toy segmenter."""
    spec = SegTaskSpec(seed=seed, val_cases=val_cases)
    task = gen_segmentation_task(spec)
    val = task.build_cases(task.val_images, task.val_masks)
    targets = []
    for k, shift in enumerate(segmentation_shift_settings(n_settings, seed)):
        images, masks = _gen_seg_split(spec, target_cases, 200 + k)
        shifted = apply_image_shift(images, shift)
        targets.append((f"{shift.kind}_{k:03d}", task.build_cases(shifted, masks)))
    return val, targets
