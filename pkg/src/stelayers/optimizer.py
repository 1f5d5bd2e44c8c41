"""SGD with Nesterov momentum and ``1 / (1 + decay * n)`` learning-rate decay.

The update is the lookahead form::

    v <- mu * v - lr * grad(theta + mu * v)
    theta <- theta + v

so the caller is responsible for evaluating the gradient at the lookahead
point. :class:`OptState` keeps the velocities and the count ``n`` of completed
updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-2
    decay: float = 1e-4
    momentum: float = 0.9
    batch_size: int = 128
    epochs: int = 128
    val_fraction: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.decay < 0:
            raise ValueError(f"decay must be >= 0, got {self.decay}")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if not (0.0 < self.val_fraction < 1.0):
            raise ValueError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")


@dataclass
class OptState:
    velocity: List[np.ndarray]
    n: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "OptState":
        return cls([np.zeros_like(p) for p in params], 0)


def lr_at(cfg: TrainConfig, n: int) -> float:
    """Learning rate for the update that follows ``n`` completed updates."""
    if n < 0:
        raise ValueError(f"iteration must be >= 0, got {n}")
    return cfg.lr / (1.0 + cfg.decay * n)


def lookahead(params: Sequence[np.ndarray], state: OptState, momentum: float) -> List[np.ndarray]:
    """Return ``theta + mu * v`` for every parameter array (new arrays)."""
    return [p + momentum * v for p, v in zip(params, state.velocity)]


def nesterov_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptState,
                  lr: float, momentum: float) -> None:
    """Update ``params`` and ``state`` in place given gradients taken at the lookahead point."""
    if len(params) != len(grads) or len(params) != len(state.velocity):
        raise ValueError(f"got {len(params)} params, {len(grads)} grads, {len(state.velocity)} velocities")
    for p, g, v in zip(params, grads, state.velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, velocity {v.shape}")
    for p, g, v in zip(params, grads, state.velocity):
        v *= momentum
        v -= lr * g
        p += v
    state.n += 1
