"""Dense arithmetic, seeded random streams, masks and Glorot initialisation.

All arrays are float64. Random numbers come from numpy's PCG64 generator.
Every consumer (weight init of one branch, the masks of one branch, the epoch
shuffle, ...) gets its own stream derived from ``(seed, *stream_key)`` through
:class:`numpy.random.SeedSequence`, so adding a layer never shifts the draws
of another one.
"""

from __future__ import annotations

import math

import numpy as np

# Stream namespaces; first element of every stream key.
INIT_STREAM = 0
MASK_STREAM = 1
SHUFFLE_STREAM = 2
SPLIT_STREAM = 3
EVAL_STREAM = 4


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Return the PCG64 generator for ``seed`` and the given stream key.

    Equal ``(seed, stream)`` always yields a bit-identical sequence.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.PCG64(ss))


def affine(W: np.ndarray, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Return ``W @ x + b``.

    ``x`` may be a single vector of length ``M`` or a batch of shape ``(B, M)``.
    """
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if W.ndim != 2 or b.ndim != 1 or x.ndim not in (1, 2):
        raise ValueError(f"affine expects W 2-D, b 1-D, x 1-D or 2-D; got W{W.shape}, x{x.shape}, b{b.shape}")
    if W.shape[1] != x.shape[-1]:
        raise ValueError(f"dimension mismatch: W has shape {W.shape} but x has shape {x.shape}")
    if W.shape[0] != b.shape[0]:
        raise ValueError(f"dimension mismatch: W has shape {W.shape} but b has shape {b.shape}")
    return x @ W.T + b


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    """Draw a ``(fan_out, fan_in)`` matrix uniform on ``[-r, r)``, ``r = sqrt(6 / (fan_in + fan_out))``."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"fan_in and fan_out must be >= 1, got fan_in={fan_in}, fan_out={fan_out}")
    bound = glorot_bound(fan_in, fan_out)
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def bernoulli_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    """0/1 float mask of ``shape``; ``p`` is the probability of KEEPING an entry."""
    if not (0.0 < p <= 1.0):
        raise ValueError(f"keep probability must satisfy 0 < p <= 1, got {p}")
    # random() lies in [0, 1), so p == 1 keeps everything
    return (rng.random(shape) < p).astype(np.float64)


class RngBank:
    """Lazily created generators keyed by stream tuple, all derived from one seed.

    The full state (every generator that has been touched) can be exported and
    restored, which is what checkpoints persist.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict = {}

    def get(self, *key: int) -> np.random.Generator:
        key = tuple(int(k) for k in key)
        rng = self._streams.get(key)
        if rng is None:
            rng = self._streams[key] = make_rng(self.seed, *key)
        return rng

    def state(self) -> dict:
        return {k: g.bit_generator.state for k, g in sorted(self._streams.items())}

    def set_state(self, states: dict) -> None:
        self._streams = {}
        for key, st in states.items():
            self.get(*key).bit_generator.state = st
