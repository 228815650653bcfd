"""Input validation helpers shared by the estimators and the I/O layer."""
from __future__ import annotations

import numpy as np

__all__ = [
    "DataError",
    "check_logit_matrix",
    "check_label_vector",
    "check_finite",
]


class DataError(ValueError):
    """Structurally valid input whose contents violate a contract."""


def check_finite(arr: np.ndarray, name: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains NaN or Inf values")
    return arr


def check_logit_matrix(logits) -> np.ndarray:
    """Coerce to a float32 [N, c] matrix with N >= 1 and c >= 2."""
    arr = np.asarray(logits, dtype=np.float32)
    if arr.ndim != 2:
        raise DataError(f"logits must be 2-dimensional, got shape {arr.shape}")
    n, c = arr.shape
    if n < 1:
        raise DataError("logits must contain at least one sample")
    if c < 2:
        raise DataError(f"need at least 2 classes, got {c}")
    return check_finite(arr, "logits")


def check_label_vector(labels, n: int, class_count: int) -> np.ndarray:
    """Coerce to an int64 label vector of length n with values in [0, class_count).

    Accepts float input holding integral values (within 1e-6), which is how
    labels travel on disk.
    """
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise DataError(f"labels must be 1-dimensional, got shape {arr.shape}")
    if arr.shape[0] != n:
        raise DataError(f"expected {n} labels, got {arr.shape[0]}")
    if np.issubdtype(arr.dtype, np.floating):
        check_finite(arr, "labels")
        rounded = np.rint(arr)
        if np.max(np.abs(arr - rounded)) > 1e-6:
            raise DataError("label tensor holds non-integral values")
        arr = rounded
    arr = arr.astype(np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= class_count):
        raise DataError(
            f"labels must lie in [0, {class_count}), got range "
            f"[{arr.min()}, {arr.max()}]"
        )
    return arr
