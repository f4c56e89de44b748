"""Dataset loading (IDX, CSV), splitting and per-epoch minibatch iteration."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .rng import RngState

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataError(ValueError):
    pass


class BadMagicError(DataError):
    pass


class TruncatedFileError(DataError):
    pass


class CountMismatchError(DataError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    class_names: tuple = field(default=())

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise DataError(f"{x.shape[0]} samples but {y.shape[0]} labels")
        if not np.isfinite(x).all():
            raise DataError("non-finite feature values")
        if self.class_count < 1:
            raise DataError("class_count must be positive")
        if y.size and (y.min() < 0 or y.max() >= self.class_count):
            raise DataError(f"labels outside [0, {self.class_count})")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> Dataset:
        return Dataset(self.features[idx], self.labels[idx], self.class_count, self.class_names)


@dataclass(frozen=True)
class Minibatch:
    inputs: np.ndarray
    targets: np.ndarray
    epoch_index: int = 0
    batch_index: int = 0
    indices: np.ndarray | None = None

    def __len__(self) -> int:
        return self.inputs.shape[0]


def _read_idx(path, expected_magic: int) -> tuple[tuple[int, ...], bytes]:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4:
        raise TruncatedFileError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", data[:4])
    if magic != expected_magic:
        raise BadMagicError(
            f"{path}: wrong magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(data) < header_len:
        raise TruncatedFileError(f"{path}: truncated IDX header")
    dims = struct.unpack(">" + "I" * ndim, data[4:header_len])
    body = data[header_len:]
    expected = math.prod(dims)
    if len(body) < expected:
        raise TruncatedFileError(f"{path}: expected {expected} data bytes, found {len(body)}")
    return dims, body[:expected]


def load_idx(images_path, labels_path) -> Dataset:
    dims, pixels = _read_idx(images_path, IDX_IMAGES_MAGIC)
    (n_labels,), raw_labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    n = dims[0]
    if n != n_labels:
        raise CountMismatchError(f"{n} images but {n_labels} labels")
    if n == 0:
        raise DataError("no samples")
    x = np.frombuffer(pixels, dtype=np.uint8).reshape(n, -1).astype(np.float64) / 255.0
    y = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    return Dataset(x, y, int(y.max()) + 1)


def load_csv(path, label_column: str) -> Dataset:
    """Read a headed CSV; labels become 0-based indices in order of first appearance."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        if label_column not in header:
            raise DataError(f"{path}: missing label column {label_column!r}")
        label_pos = header.index(label_column)
        feature_cols = [i for i in range(len(header)) if i != label_pos]
        rows, labels = [], []
        mapping: dict[str, int] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {lineno} has {len(row)} fields, header has {len(header)}"
                )
            values = []
            for i in feature_cols:
                try:
                    v = float(row[i])
                except ValueError:
                    raise DataError(
                        f"{path}: row {lineno}, column {header[i]!r}: non-numeric value {row[i]!r}"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(
                        f"{path}: row {lineno}, column {header[i]!r}: non-finite value {row[i]!r}"
                    )
                values.append(v)
            rows.append(values)
            labels.append(mapping.setdefault(row[label_pos], len(mapping)))
    if not rows:
        raise DataError(f"{path}: no samples")
    return Dataset(
        np.array(rows, dtype=np.float64),
        np.array(labels, dtype=np.int64),
        len(mapping),
        tuple(mapping),
    )


def split(d: Dataset, val_fraction: float, rng: RngState) -> tuple[Dataset, Dataset]:
    if not 0.0 < val_fraction < 1.0:
        raise DataError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    n = len(d)
    n_val = max(1, math.floor(n * val_fraction))
    if n - n_val < 1:
        raise DataError(f"val_fraction {val_fraction} leaves no training samples out of {n}")
    perm = rng.shuffle(n)
    return d.subset(perm[: n - n_val]), d.subset(perm[n - n_val:])


def standardize(train: Dataset, *others: Dataset) -> list[Dataset]:
    """Zero-mean unit-variance features, with statistics from ``train`` only."""
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0)
    std[std == 0] = 1.0
    return [
        Dataset((d.features - mean) / std, d.labels, d.class_count, d.class_names)
        for d in (train, *others)
    ]


def minibatches(train: Dataset, batch_size: int, epoch: int, rng: RngState) -> list[Minibatch]:
    """Reshuffle for ``epoch`` and cut into ceil(n / batch_size) batches, last one short."""
    if batch_size < 1:
        raise DataError("batch_size must be at least 1")
    perm = rng.fold(epoch).shuffle(len(train))
    out = []
    for b, start in enumerate(range(0, len(train), batch_size)):
        idx = perm[start:start + batch_size]
        out.append(Minibatch(train.features[idx], train.labels[idx], epoch, b, idx))
    return out
