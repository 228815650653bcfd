"""shiftcal: confidence-based estimation of accuracy and Dice under domain
shift, with class-specific calibration for imbalanced data."""

from .calibration import (
    METHOD_NAMES,
    AverageConfidence,
    ClasswiseStats,
    ConfidenceDifference,
    NotFittedError,
    TemperatureScaling,
    ThresholdedConfidence,
    VectorScaling,
    accuracy,
    classwise_stats,
    make_estimator,
    softmax,
)
from .evaluation import EstimateReport, mae, r2, run_benchmark, run_benchmark_manifests
from .segmentation import SEG_METHOD_NAMES, DiceEstimator, DiceReport, real_dsc, soft_dsc
from .serialize import load_calibrator, save_calibrator
from .tensor_io import (
    Manifest,
    ManifestEntry,
    PredictionSet,
    SegCase,
    concat_prediction_sets,
    load_manifest,
    read_tensor,
    save_dataset,
    write_manifest,
    write_tensor,
)
from .validation import DataError

__version__ = "0.1.0"
