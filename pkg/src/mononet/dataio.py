"""Dataset container, CSV / IDX readers and stratified splitting."""
from __future__ import annotations

import csv
import gzip
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ContractError, DataError, FormatError, ParseError, StratificationError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray            # N x D float64 (images keep N x H x W)
    labels: np.ndarray              # N int64
    feature_names: tuple[str, ...]
    name: str = "dataset"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if y.ndim != 1 or len(y) < 1:
            raise DataError("labels must be a non-empty vector")
        if len(x) != len(y):
            raise DataError(f"{len(x)} feature rows but {len(y)} labels")
        if np.any(y < 0) or not np.all(np.equal(np.mod(y, 1), 0)):
            raise DataError("labels must be non-negative integers")
        names = tuple(self.feature_names)
        if len(set(names)) != len(names):
            raise DataError("feature names must be unique")
        if len(names) != x.reshape(len(x), -1).shape[1]:
            raise DataError(f"{len(names)} feature names for {x.reshape(len(x), -1).shape[1]} features")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y.astype(np.int64))
        object.__setattr__(self, "feature_names", names)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def flat_features(self) -> np.ndarray:
        return self.features.reshape(len(self), -1)

    def subset(self, idx: Sequence[int], name: str | None = None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.feature_names,
                       name or self.name, dict(self.meta))

    def column(self, name: str) -> np.ndarray:
        return self.flat_features[:, self.feature_names.index(name)]


_DEFAULT_LABELS = {"-1": 0, "0": 0, "1": 1, "+1": 1}


def load_csv(path, label_mapping: Mapping[str, int] | None = None, name: str | None = None) -> Dataset:
    """Read a risk-score style CSV: header row, outcome in the first column.

    Outcomes in {-1, +1} or {0, 1} map to {0, 1} unless ``label_mapping`` is
    given.  All other cells must be numeric.
    """
    path = Path(path)
    mapping = dict(label_mapping) if label_mapping is not None else _DEFAULT_LABELS
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", 1) from None
        header = [h.strip() for h in header]
        if len(header) < 2:
            raise ParseError("need an outcome column and at least one feature", 1)
        width = len(header)
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise ParseError(f"expected {width} cells, found {len(row)}", lineno)
            key = row[0].strip()
            if key not in mapping:
                # tolerate numeric spellings such as "1.0" / "-1.0"
                try:
                    key = str(int(float(key)))
                except ValueError:
                    raise ParseError(f"unknown label {row[0]!r}", lineno) from None
                if key not in mapping:
                    raise ParseError(f"unknown label {row[0]!r}", lineno)
            if any(not c.strip() for c in row[1:]):
                raise ParseError("missing cell", lineno)
            labels.append(mapping[key])
            try:
                rows.append([float(c) for c in row[1:]])
            except ValueError:
                bad = next(c for c in row[1:] if not _is_float(c))
                raise ParseError(f"non-numeric cell {bad!r}", lineno) from None
    if not rows:
        raise ParseError("no data rows", 2)
    x = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ParseError("non-finite feature value")
    try:
        return Dataset(x, np.asarray(labels), tuple(header[1:]), name or path.stem,
                       {"source": str(path), "outcome": header[0]})
    except DataError as exc:
        raise ParseError(str(exc)) from exc


def _is_float(c: str) -> bool:
    try:
        float(c)
        return True
    except ValueError:
        return False


def save_csv(data: Dataset, path, outcome_name: str = "y", signed: bool = False) -> None:
    """Write ``data`` in the same layout ``load_csv`` reads (binary labels only)."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow([data.meta.get("outcome", outcome_name), *data.feature_names])
        for y, row in zip(data.labels, data.flat_features):
            label = (2 * int(y) - 1) if signed else int(y)
            w.writerow([label, *(repr(float(v)) if v != int(v) else str(int(v)) for v in row)])


def _open(path):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def read_idx(path, expected_magic: int) -> np.ndarray:
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise FormatError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    if len(raw) < 4 + 4 * ndim:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    count = math.prod(dims)
    body = raw[4 + 4 * ndim:]
    if len(body) != count:
        raise FormatError(f"{path}: expected {count} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    """Write an unsigned-byte IDX file (images: 3-d, labels: 1-d)."""
    a = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | a.ndim
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(f">{a.ndim}I", *a.shape))
        f.write(a.tobytes())


def load_idx(images_path, labels_path, name: str = "mnist") -> Dataset:
    """Read an MNIST-style image/label IDX pair; pixels are scaled to [0, 1]."""
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    h, w = images.shape[1:]
    names = tuple(f"px_{r}_{c}" for r in range(h) for c in range(w))
    return Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64), names, name,
                   {"image_shape": [h, w]})


def split(data: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified train/test split, deterministic in ``seed``."""
    if not 0.0 < test_fraction < 1.0:
        raise ContractError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in np.unique(data.labels):
        idx = np.flatnonzero(data.labels == c)
        if len(idx) < 2:
            raise StratificationError(f"class {c} has {len(idx)} sample(s); need at least 2")
        idx = rng.permutation(idx)
        n_test = int(round(test_fraction * len(idx)))
        n_test = min(max(n_test, 1), len(idx) - 1)
        test_idx.append(idx[:n_test])
        train_idx.append(idx[n_test:])
    tr = np.sort(np.concatenate(train_idx))
    te = np.sort(np.concatenate(test_idx))
    return data.subset(tr, f"{data.name}-train"), data.subset(te, f"{data.name}-test")


def minmax_scale(train: Dataset, *others: Dataset) -> list[Dataset]:
    """Scale every feature to [0, 1] using the ranges of ``train``; constant features map to 0."""
    x = train.flat_features
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    out = []
    for d in (train, *others):
        scaled = (d.flat_features - lo) / span
        out.append(Dataset(scaled.reshape(d.features.shape), d.labels, d.feature_names, d.name, dict(d.meta)))
    return out
