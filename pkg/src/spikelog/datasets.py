"""Datasets for training and evaluating the pipeline.

Features live on the 8-bit grid in [0, 1] (multiples of 1/255), which
is what the input encoder expects from a sensor front end; generating
straight onto that grid makes the on-disk container a lossless round
trip and keeps in-memory and file-based runs bit-identical.

The synthetic workload is a Gaussian-blob classification task whose
difficulty is set by the cluster spread; it is referenced elsewhere by
the URI ``synth:blobs``.
"""

from __future__ import annotations

import csv
import hashlib
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np

_MAGIC = b"SLDS"
_VERSION = 1


@dataclass
class Dataset:
    """Feature matrix in [0, 1] with integer labels."""

    x: np.ndarray
    y: np.ndarray
    n_classes: int
    feature_shape: Tuple[int, ...]

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or len(self.x) != len(self.y):
            raise ValueError("features must be (n, d) with one label per row")
        if self.x.size and (self.x.min() < 0 or self.x.max() > 1):
            raise ValueError("features must lie in [0, 1]")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError("labels out of range")

    def __len__(self) -> int:
        return len(self.x)

    @property
    def n_features(self) -> int:
        return self.x.shape[1]


def _snap(x: np.ndarray) -> np.ndarray:
    """Project features onto the 8-bit grid."""
    return np.round(np.clip(x, 0.0, 1.0) * 255.0) / 255.0


def make_blobs(
    n_samples: int,
    n_features: int = 16,
    n_classes: int = 4,
    spread: float = 0.18,
    seed: int = 0,
    feature_shape: Tuple[int, ...] = None,
) -> Dataset:
    """Gaussian clusters, one per class, clipped to the unit box.

    Class centers are drawn once from [0.2, 0.8]^d so every class has
    headroom before clipping; samples round onto the 8-bit feature grid.
    """
    if n_samples < n_classes:
        raise ValueError("need at least one sample per class")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.2, 0.8, size=(n_classes, n_features))
    y = rng.integers(0, n_classes, size=n_samples)
    x = centers[y] + rng.normal(0.0, spread, size=(n_samples, n_features))
    return Dataset(
        x=_snap(x),
        y=y,
        n_classes=n_classes,
        feature_shape=feature_shape or (n_features,),
    )


def save_dataset(ds: Dataset, path) -> None:
    """Write the binary container: u8 features, u16 labels, crc32 tail."""
    shape = ds.feature_shape
    head = struct.pack(
        "<HIBH", _VERSION, len(ds), len(shape), ds.n_classes
    ) + struct.pack(f"<{len(shape)}I", *shape)
    feats = np.round(ds.x * 255.0).astype(np.uint8).tobytes()
    labels = ds.y.astype("<u2").tobytes()
    payload = head + feats + labels
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    Path(path).write_bytes(_MAGIC + payload + struct.pack("<I", crc))


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a dataset container")
    payload, (crc,) = raw[4:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ValueError(f"{path}: checksum mismatch")
    version, n, ndim, n_classes = struct.unpack_from("<HIBH", payload)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    off = struct.calcsize("<HIBH")
    shape = struct.unpack_from(f"<{ndim}I", payload, off)
    off += 4 * ndim
    d = int(np.prod(shape))
    feats = np.frombuffer(payload, dtype=np.uint8, count=n * d, offset=off)
    off += n * d
    labels = np.frombuffer(payload, dtype="<u2", count=n, offset=off)
    return Dataset(
        x=feats.reshape(n, d).astype(np.float64) / 255.0,
        y=labels.astype(np.int64),
        n_classes=n_classes,
        feature_shape=tuple(int(s) for s in shape),
    )


def import_csv(path, n_classes: int = None) -> Dataset:
    """Rows of floats with an integer label in the last column."""
    rows = []
    labels = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            rows.append([float(v) for v in row[:-1]])
            labels.append(int(float(row[-1])))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    x = _snap(np.array(rows))
    y = np.array(labels)
    return Dataset(
        x=x,
        y=y,
        n_classes=n_classes if n_classes is not None else int(y.max()) + 1,
        feature_shape=(x.shape[1],),
    )


def dataset_hash(ds: Dataset) -> str:
    """Content hash over the container encoding of the dataset."""
    h = hashlib.sha256()
    h.update(np.round(ds.x * 255.0).astype(np.uint8).tobytes())
    h.update(ds.y.astype("<u2").tobytes())
    h.update(struct.pack("<HH", ds.n_classes, len(ds.feature_shape)))
    return h.hexdigest()


def train_test_blobs(
    n_train: int,
    n_test: int,
    n_features: int = 16,
    n_classes: int = 4,
    spread: float = 0.18,
    seed: int = 0,
) -> Tuple[Dataset, Dataset]:
    """Disjoint train/test draws from one blob configuration.

    One seeded draw of n_train + n_test samples, split in order, so the
    two halves share class centers but no samples.
    """
    train = make_blobs(n_train + n_test, n_features, n_classes, spread, seed)
    return (
        Dataset(train.x[:n_train], train.y[:n_train], n_classes, train.feature_shape),
        Dataset(train.x[n_train:], train.y[n_train:], n_classes, train.feature_shape),
    )
