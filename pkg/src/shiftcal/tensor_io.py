"""PCT1 binary tensor format and dataset manifests.

File layout (byte-stable public contract):
    magic "PCT1" (4 ASCII bytes)
    u32 little-endian ndim
    ndim x u64 little-endian dims
    row-major f32 little-endian payload

Manifests are text files with a key=value header block (role, task,
class_count) followed by one tab-separated entry per line:
    <case-id>\t<logits-path>\t<labels-path or "-">
Paths are resolved relative to the manifest's directory.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .validation import DataError, check_finite, check_label_vector, check_logit_matrix

__all__ = [
    "MAGIC",
    "FormatError",
    "PredictionSet",
    "SegCase",
    "ManifestEntry",
    "Manifest",
    "write_tensor",
    "read_tensor",
    "write_manifest",
    "load_manifest",
    "save_dataset",
    "concat_prediction_sets",
]

MAGIC = b"PCT1"


class FormatError(ValueError):
    """Malformed tensor file or manifest."""


@dataclass(frozen=True)
class PredictionSet:
    """Logits for N samples over c classes, with optional ground-truth labels."""

    logits: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        logits = check_logit_matrix(self.logits)
        object.__setattr__(self, "logits", logits)
        if self.labels is not None:
            labels = check_label_vector(self.labels, self.n_samples, self.class_count)
            object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return self.logits.shape[0]

    @property
    def class_count(self) -> int:
        return self.logits.shape[1]


@dataclass(frozen=True)
class SegCase:
    """Per-case voxel logits [c, D1..Dk] (k = 2 or 3) with optional label volume."""

    logits: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=np.float32)
        if logits.ndim not in (3, 4):
            raise DataError(
                f"segmentation logits must have 2 or 3 spatial dims, got shape {logits.shape}"
            )
        if logits.shape[0] < 2:
            raise DataError(f"need at least 2 classes, got {logits.shape[0]}")
        check_finite(logits, "logits")
        object.__setattr__(self, "logits", logits)
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != self.spatial_shape:
                raise DataError(
                    f"label volume shape {labels.shape} does not match "
                    f"spatial shape {self.spatial_shape}"
                )
            flat = check_label_vector(labels.reshape(-1), labels.size, self.class_count)
            object.__setattr__(self, "labels", flat.reshape(self.spatial_shape))

    @property
    def class_count(self) -> int:
        return self.logits.shape[0]

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return self.logits.shape[1:]

    @property
    def n_pixels(self) -> int:
        return int(np.prod(self.spatial_shape))

    def flat_logits(self) -> np.ndarray:
        """Pixels as rows of a [n, c] logit matrix."""
        return self.logits.reshape(self.class_count, -1).T

    def flat_labels(self) -> np.ndarray | None:
        return None if self.labels is None else self.labels.reshape(-1)


def write_tensor(data, path) -> None:
    """Write a tensor to `path` in PCT1 format. Rejects non-finite values and
    zero-sized dimensions before touching the file."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if any(d <= 0 for d in arr.shape):
        raise DataError(f"zero-sized dimension in shape {arr.shape}")
    check_finite(arr, "tensor")
    header = MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_tensor(path) -> np.ndarray:
    """Read a PCT1 tensor; inverse of write_tensor. Validates magic, exact
    payload length, and finiteness."""
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise FormatError(f"{path}: file too short for a PCT1 header")
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    (ndim,) = struct.unpack("<I", raw[4:8])
    if ndim == 0:
        raise FormatError(f"{path}: zero-dimensional tensor")
    dims_end = 8 + 8 * ndim
    if len(raw) < dims_end:
        raise FormatError(f"{path}: truncated dimension list")
    dims = struct.unpack(f"<{ndim}Q", raw[8:dims_end])
    if any(d == 0 for d in dims):
        raise FormatError(f"{path}: zero-sized dimension in shape {dims}")
    count = 1
    for d in dims:
        count *= d
    expected = dims_end + 4 * count
    if len(raw) < expected:
        raise FormatError(
            f"{path}: truncated payload, expected {expected} bytes, got {len(raw)}"
        )
    if len(raw) > expected:
        raise FormatError(
            f"{path}: trailing bytes, expected {expected} bytes, got {len(raw)}"
        )
    arr = np.frombuffer(raw, dtype="<f4", offset=dims_end).reshape(dims)
    arr = arr.astype(np.float32)
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{path}: payload contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class ManifestEntry:
    case_id: str
    logits_path: str
    labels_path: str | None = None


@dataclass(frozen=True)
class Manifest:
    role: str  # "validation" or "target"
    task: str  # "classification" or "segmentation"
    class_count: int
    entries: tuple[ManifestEntry, ...]

    def __post_init__(self):
        if self.role not in ("validation", "target"):
            raise FormatError(f"unknown role {self.role!r}")
        if self.task not in ("classification", "segmentation"):
            raise FormatError(f"unknown task {self.task!r}")
        if self.class_count < 2:
            raise FormatError(f"class_count must be >= 2, got {self.class_count}")
        object.__setattr__(self, "entries", tuple(self.entries))


def write_manifest(manifest: Manifest, path) -> None:
    lines = [
        f"role={manifest.role}",
        f"task={manifest.task}",
        f"class_count={manifest.class_count}",
        "",
    ]
    for e in manifest.entries:
        lines.append(f"{e.case_id}\t{e.logits_path}\t{e.labels_path or '-'}")
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_manifest(path) -> Manifest:
    header: dict[str, str] = {}
    entries: list[ManifestEntry] = []
    in_header = True
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        if in_header and "=" in line and "\t" not in line:
            key, _, value = line.partition("=")
            header[key.strip()] = value.strip()
            continue
        in_header = False
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
        case_id, logits_path, labels_path = parts
        entries.append(
            ManifestEntry(case_id, logits_path, None if labels_path == "-" else labels_path)
        )
    for key in ("role", "task", "class_count"):
        if key not in header:
            raise FormatError(f"{path}: manifest header missing {key!r}")
    try:
        class_count = int(header["class_count"])
    except ValueError as exc:
        raise FormatError(f"{path}: class_count is not an integer") from exc
    return Manifest(header["role"], header["task"], class_count, tuple(entries))


def load_manifest(path):
    """Load a manifest and every dataset it references, preserving entry order.

    Returns (Manifest, list of PredictionSet or SegCase).
    """
    path = Path(path)
    manifest = _parse_manifest(path)
    if not manifest.entries:
        raise FormatError(f"{path}: manifest has no entries")
    base = path.parent
    datasets = []
    for entry in manifest.entries:
        if manifest.role == "validation" and entry.labels_path is None:
            raise DataError(
                f"{path}: validation entry {entry.case_id!r} has no labels"
            )
        logits = read_tensor(base / entry.logits_path)
        labels = (
            read_tensor(base / entry.labels_path)
            if entry.labels_path is not None
            else None
        )
        if manifest.task == "classification":
            if logits.ndim != 2:
                raise DataError(
                    f"{entry.case_id}: classification logits must be [N, c], "
                    f"got shape {logits.shape}"
                )
            if logits.shape[1] != manifest.class_count:
                raise DataError(
                    f"{entry.case_id}: logits class dim {logits.shape[1]} != "
                    f"manifest class_count {manifest.class_count}"
                )
            datasets.append(PredictionSet(logits, labels))
        else:
            if logits.shape[0] != manifest.class_count:
                raise DataError(
                    f"{entry.case_id}: logits class dim {logits.shape[0]} != "
                    f"manifest class_count {manifest.class_count}"
                )
            datasets.append(SegCase(logits, labels))
    return manifest, datasets


def save_dataset(directory, datasets, role: str, task: str, class_count: int) -> Path:
    """Materialize datasets as PCT1 files plus a manifest in `directory`.

    Returns the manifest path. Entry order follows the input order.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, data in enumerate(datasets):
        case_id = f"case_{k:04d}"
        logits_name = f"{case_id}_logits.pct1"
        write_tensor(data.logits, directory / logits_name)
        labels_name = None
        if data.labels is not None:
            labels_name = f"{case_id}_labels.pct1"
            write_tensor(data.labels.astype(np.float32), directory / labels_name)
        entries.append(ManifestEntry(case_id, logits_name, labels_name))
    manifest = Manifest(role, task, class_count, tuple(entries))
    path = directory / "manifest.txt"
    write_manifest(manifest, path)
    return path


def concat_prediction_sets(sets) -> PredictionSet:
    """Merge prediction sets in order; labels survive only if all sets have them."""
    sets = list(sets)
    if not sets:
        raise DataError("no prediction sets to concatenate")
    logits = np.concatenate([s.logits for s in sets], axis=0)
    if all(s.labels is not None for s in sets):
        labels = np.concatenate([s.labels for s in sets])
    else:
        labels = None
    return PredictionSet(logits, labels)
