"""Softmax cross-entropy and top-1 accuracy."""

from __future__ import annotations

import numpy as np

PROB_FLOOR = 1e-12


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits, label):
    """Cross-entropy of ``softmax(logits)`` against ``label`` and its gradient w.r.t. the logits.

    Accepts one logit vector with an integer label, or a ``(B, K)`` batch with
    ``B`` labels; in the batch case the per-example losses are returned.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    L = logits[None] if single else logits
    labels = np.atleast_1d(np.asarray(label))
    if labels.shape != (L.shape[0],):
        raise ValueError(f"got {labels.shape} labels for {L.shape[0]} logit vectors")
    K = L.shape[1]
    if not np.issubdtype(labels.dtype, np.integer) or np.any(labels < 0) or np.any(labels >= K):
        raise ValueError(f"labels must be integers in [0, {K}), got {labels}")
    probs = softmax(L)
    rows = np.arange(L.shape[0])
    loss = -np.log(np.maximum(probs[rows, labels], PROB_FLOOR))
    grad = probs
    grad[rows, labels] -= 1.0
    if single:
        return float(loss[0]), grad[0]
    return loss, grad


def top1_accuracy(logits, labels) -> float:
    """Percentage of rows whose argmax equals the label; ties go to the lowest index."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels))
    if logits.shape[0] == 0:
        raise ValueError("top1_accuracy needs at least one prediction")
    if labels.shape != (logits.shape[0],):
        raise ValueError(f"got {labels.shape} labels for {logits.shape[0]} predictions")
    # np.argmax returns the first maximal index
    hits = np.argmax(logits, axis=1) == labels
    return 100.0 * float(hits.mean())
