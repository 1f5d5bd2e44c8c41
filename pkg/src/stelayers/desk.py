"""Small digit dataset for quick experiments.

Built from scikit-learn's bundled 8x8 handwritten digits (1797 images, 64
features). Train and test images come from disjoint sets of source digits;
each output example is a source digit shifted by up to one pixel and
perturbed with pixel noise, stored as 0..255 bytes so it can round-trip
through IDX files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .data import Dataset, load_idx, save_idx


def _augment(images: np.ndarray, labels: np.ndarray, n: int, rng: np.random.Generator,
             noise: float) -> Tuple[np.ndarray, np.ndarray]:
    src = rng.integers(0, len(images), size=n)
    out = np.zeros((n, 8, 8))
    shifts = rng.integers(-1, 2, size=(n, 2))
    for k, (i, (dy, dx)) in enumerate(zip(src, shifts)):
        img = np.roll(images[i], (dy, dx), axis=(0, 1))
        # zero the wrapped row/column instead of letting it wrap around
        if dy == 1:
            img[0, :] = 0
        elif dy == -1:
            img[-1, :] = 0
        if dx == 1:
            img[:, 0] = 0
        elif dx == -1:
            img[:, -1] = 0
        out[k] = img
    out = out * 16.0 + rng.normal(0.0, noise, size=out.shape)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8), labels[src].astype(np.uint8)


def make_digits(n_train: int = 5000, n_test: int = 1000, seed: int = 0, noise: float = 24.0,
                test_sources: int = 400, train_sources: Optional[int] = None):
    """Return ``((train_images, train_labels), (test_images, test_labels))`` as uint8 arrays.

    ``train_sources`` caps how many distinct source digits feed the training
    split (default: all that are not reserved for the test split).
    """
    from sklearn.datasets import load_digits

    digits = load_digits()
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(digits.images))
    test_idx, train_idx = perm[:test_sources], perm[test_sources:]
    if train_sources is not None:
        train_idx = train_idx[:train_sources]
    train = _augment(digits.images[train_idx], digits.target[train_idx], n_train, rng, noise)
    test = _augment(digits.images[test_idx], digits.target[test_idx], n_test, rng, noise)
    return train, test


def write_digits_idx(directory, **kwargs) -> dict:
    """Write the desk dataset as four IDX files and return their paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (xtr, ytr), (xte, yte) = make_digits(**kwargs)
    paths = {
        "train_images": directory / "train-images.idx3-ubyte",
        "train_labels": directory / "train-labels.idx1-ubyte",
        "test_images": directory / "test-images.idx3-ubyte",
        "test_labels": directory / "test-labels.idx1-ubyte",
    }
    save_idx(paths["train_images"], paths["train_labels"], xtr, ytr)
    save_idx(paths["test_images"], paths["test_labels"], xte, yte)
    return paths


def load_digits_idx(paths: dict) -> Tuple[Dataset, Dataset]:
    return (load_idx(paths["train_images"], paths["train_labels"]),
            load_idx(paths["test_images"], paths["test_labels"]))
