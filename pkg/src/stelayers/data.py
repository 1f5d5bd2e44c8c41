"""Dataset loading (CSV, IDX), per-feature normalisation and train/validation splitting."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from .core import SPLIT_STREAM, make_rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
STD_FLOOR = 1e-8


class DataError(Exception):
    pass


class RaggedRowError(DataError):
    pass


class NonNumericCellError(DataError):
    pass


class MissingLabelColumnError(DataError):
    pass


class IdxFormatError(DataError):
    pass


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    mean: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise DataError(f"features {self.X.shape} and labels {self.y.shape} do not line up")
        if self.y.size and self.y.min() < 0:
            raise DataError("labels must be non-negative class indices")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        return replace(self, X=self.X[idx], y=self.y[idx])


def _parse_label(cell: str, line: int) -> int:
    try:
        return int(cell)
    except ValueError:
        pass
    try:
        v = float(cell)
    except ValueError:
        raise NonNumericCellError(f"line {line}: label {cell!r} is not numeric") from None
    if not v.is_integer():
        raise NonNumericCellError(f"line {line}: label {cell!r} is not an integer")
    return int(v)


def load_csv(path, label_column: Union[int, str] = -1, header: bool = False) -> Dataset:
    """Read a rectangular numeric CSV; ``label_column`` is an index (negative allowed) or a header name."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [(i, r) for i, r in enumerate(csv.reader(fh), start=1) if r and any(c.strip() for c in r)]
    names = None
    if header:
        if not rows:
            raise DataError(f"{path}: empty file")
        names = [c.strip() for c in rows[0][1]]
        rows = rows[1:]
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(names) if names is not None else len(rows[0][1])
    if isinstance(label_column, str):
        if names is None:
            try:
                col = int(label_column)
            except ValueError:
                raise MissingLabelColumnError(
                    f"{path}: label column {label_column!r} given by name but the file has no header") from None
        elif label_column in names:
            col = names.index(label_column)
        else:
            raise MissingLabelColumnError(f"{path}: no column named {label_column!r} in header {names}")
    else:
        col = label_column
    if not -width <= col < width:
        raise MissingLabelColumnError(f"{path}: label column {label_column} out of range for {width} columns")
    col %= width
    X = np.empty((len(rows), width - 1))
    y = np.empty(len(rows), dtype=np.int64)
    for r, (line, cells) in enumerate(rows):
        if len(cells) != width:
            raise RaggedRowError(f"{path}: line {line} has {len(cells)} fields, expected {width}")
        y[r] = _parse_label(cells[col].strip(), line)
        feats = cells[:col] + cells[col + 1:]
        for c, cell in enumerate(feats):
            try:
                X[r, c] = float(cell)
            except ValueError:
                raise NonNumericCellError(f"{path}: line {line}: cell {cell!r} is not numeric") from None
    return Dataset(X, y)


def save_csv(path, ds: Dataset, header: bool = True) -> None:
    """Write features then the label as the last column."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow([f"f{i}" for i in range(ds.n_features)] + ["label"])
        for x, label in zip(ds.X, ds.y):
            w.writerow([repr(float(v)) for v in x] + [int(label)])


def _read_idx(path: Path, expected_magic: int) -> Tuple[tuple, bytes]:
    raw = path.read_bytes()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise IdxFormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    payload = raw[head:]
    if len(payload) != math.prod(dims):
        raise IdxFormatError(f"{path}: payload has {len(payload)} bytes, header promises {math.prod(dims)}")
    return dims, payload


def load_idx(images_path, labels_path) -> Dataset:
    """Read an IDX image/label pair (u8 payloads); each image is flattened row-major."""
    dims, pixels = _read_idx(Path(images_path), IDX_IMAGES_MAGIC)
    (n_labels,), labels = _read_idx(Path(labels_path), IDX_LABELS_MAGIC)
    n, rows, cols = dims
    if n != n_labels:
        raise DataError(f"{images_path} holds {n} images but {labels_path} holds {n_labels} labels")
    X = np.frombuffer(pixels, dtype=np.uint8).reshape(n, rows * cols).astype(np.float64)
    y = np.frombuffer(labels, dtype=np.uint8).astype(np.int64)
    return Dataset(X, y)


def save_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">4I", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">2I", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


def normalize(train: Dataset, *others: Dataset) -> List[Dataset]:
    """Standardise every split with the train split's per-feature mean and population std.

    Features whose std falls below ``STD_FLOOR`` are divided by the floor instead.
    """
    if len(train) == 0:
        raise DataError("cannot normalise with an empty training split")
    mean = train.X.mean(axis=0)
    std = np.maximum(train.X.std(axis=0), STD_FLOOR)
    out = []
    for ds in (train,) + others:
        if ds.n_features != train.n_features:
            raise DataError(f"split has {ds.n_features} features, train has {train.n_features}")
        out.append(Dataset((ds.X - mean) / std, ds.y.copy(), mean, std))
    return out


def split(ds: Dataset, val_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """Random ``(train, val)`` partition with ``floor(n * val_fraction)`` validation examples."""
    if not (0.0 < val_fraction < 1.0):
        raise ValueError(f"val_fraction must be in (0, 1), got {val_fraction}")
    n = len(ds)
    perm = make_rng(seed, SPLIT_STREAM).permutation(n)
    n_val = math.floor(n * val_fraction)
    return ds.subset(perm[n_val:]), ds.subset(perm[:n_val])
