"""Dense and STE layers: train/eval forward passes and exact backward passes.

Inputs are either one vector of length ``M`` or a batch ``(B, M)``. Masks
follow the same convention with a leading batch axis when the input is
batched. Backward passes return gradients summed over the batch; callers
that want a mean scale the upstream gradient.

Dropout here is the non-inverted kind: masks keep an entry with probability
``p`` during training and evaluation multiplies by ``p`` instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import bernoulli_mask

ACTIVATIONS = ("relu", "softmax", "identity")
NOISE_MODES = ("dropout", "dropconnect")


def activate(h: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return np.maximum(h, 0.0)
    if act == "identity":
        return h.copy()
    if act == "softmax":
        z = h - h.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)
    raise ValueError(f"unknown activation {act!r}")


def activate_backward(h: np.ndarray, a: np.ndarray, da: np.ndarray, act: str) -> np.ndarray:
    """Pull ``da`` (gradient w.r.t. the activation output ``a``) back to ``h``."""
    if act == "relu":
        return da * (h > 0.0)
    if act == "identity":
        return da.copy()
    if act == "softmax":
        return a * (da - np.sum(da * a, axis=-1, keepdims=True))
    raise ValueError(f"unknown activation {act!r}")


def _check_keep(p: float, name: str) -> None:
    if not (0.0 < p <= 1.0):
        raise ValueError(f"{name} must satisfy 0 < {name} <= 1, got {p}")


@dataclass
class DenseLayer:
    """``y = f(W x + b)``, optionally followed by dropout with keep probability ``dropout``."""

    W: np.ndarray
    b: np.ndarray
    act: str = "relu"
    dropout: Optional[float] = None

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.ndim != 1 or self.W.shape[0] != self.b.shape[0]:
            raise ValueError(f"inconsistent dense layer shapes W{self.W.shape}, b{self.b.shape}")
        if self.act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.act!r}")
        if self.dropout is not None:
            _check_keep(self.dropout, "dropout")

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]

    def params(self) -> list:
        return [self.W, self.b]

    def sample_masks(self, batch: int, rngs: Sequence[np.random.Generator]) -> "MaskSet":
        if self.dropout is None:
            return MaskSet(branch=None, output=None)
        return MaskSet(branch=None, output=bernoulli_mask((batch, self.n_out), self.dropout, rngs[0]))


@dataclass
class STELayer:
    """Ensemble of ``A`` affine maps whose noisy outputs are averaged before ``act``.

    ``Ws`` has shape ``(A, N, M)`` and ``bs`` shape ``(A, N)``. ``p`` is the keep
    probability of the internal noise, ``p_out`` that of the dropout applied to
    the post-activation output (``None`` disables it).
    """

    Ws: np.ndarray
    bs: np.ndarray
    p: float = 0.5
    noise: str = "dropout"
    p_out: Optional[float] = 0.5
    act: str = "relu"

    def __post_init__(self):
        self.Ws = np.asarray(self.Ws, dtype=np.float64)
        self.bs = np.asarray(self.bs, dtype=np.float64)
        if self.Ws.ndim != 3 or self.bs.ndim != 2 or self.Ws.shape[:2] != self.bs.shape:
            raise ValueError(f"inconsistent STE layer shapes Ws{self.Ws.shape}, bs{self.bs.shape}")
        if self.Ws.shape[0] < 1:
            raise ValueError("averaging factor A must be >= 1")
        if self.noise not in NOISE_MODES:
            raise ValueError(f"noise must be one of {NOISE_MODES}, got {self.noise!r}")
        if self.act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.act!r}")
        _check_keep(self.p, "p")
        if self.p_out is not None:
            _check_keep(self.p_out, "p_out")

    @property
    def A(self) -> int:
        return self.Ws.shape[0]

    @property
    def n_in(self) -> int:
        return self.Ws.shape[2]

    @property
    def n_out(self) -> int:
        return self.Ws.shape[1]

    def params(self) -> list:
        return [self.Ws, self.bs]

    def sample_masks(self, batch: int, rngs: Sequence[np.random.Generator]) -> "MaskSet":
        """Fresh per-example masks; ``rngs`` holds one stream per branch plus one for the output."""
        A, N, M = self.Ws.shape
        shape = (batch, N) if self.noise == "dropout" else (batch, N, M)
        branch = np.stack([bernoulli_mask(shape, self.p, rngs[i]) for i in range(A)], axis=1)
        output = None
        if self.p_out is not None:
            output = bernoulli_mask((batch, N), self.p_out, rngs[A])
        return MaskSet(branch=branch, output=output)


@dataclass
class MaskSet:
    """Branch masks ``(B, A, N)`` for dropout or ``(B, A, N, M)`` for dropconnect, plus an output mask ``(B, N)``."""

    branch: Optional[np.ndarray]
    output: Optional[np.ndarray] = None


@dataclass
class LayerCache:
    owner: object
    x: np.ndarray
    branch: Optional[np.ndarray]  # noisy per-branch outputs before averaging, (B, A, N)
    pre: np.ndarray  # averaged pre-activation
    act_out: np.ndarray  # f(pre), before output dropout
    y: np.ndarray
    masks: MaskSet
    batched: bool = field(default=True)


def _as_batch(x: np.ndarray, n_in: int) -> tuple:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
        batched = False
    elif x.ndim == 2:
        batched = True
    else:
        raise ValueError(f"input must be 1-D or 2-D, got shape {x.shape}")
    if x.shape[1] != n_in:
        raise ValueError(f"input has {x.shape[1]} features, layer expects {n_in}")
    return x, batched


def _mask_batch(mask: Optional[np.ndarray], batched: bool) -> Optional[np.ndarray]:
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=np.float64)
    return mask if batched else mask[None]


def _unbatch(y: np.ndarray, batched: bool) -> np.ndarray:
    return y if batched else y[0]


# --- dense -----------------------------------------------------------------


def dense_forward_train(layer: DenseLayer, x: np.ndarray, masks: Optional[MaskSet] = None):
    """Train-mode forward; the output mask (if any) multiplies the activation output."""
    X, batched = _as_batch(x, layer.n_in)
    masks = masks or MaskSet(branch=None, output=None)
    out_mask = _mask_batch(masks.output, batched)
    pre = X @ layer.W.T + layer.b
    a = activate(pre, layer.act)
    if out_mask is not None:
        if out_mask.shape != a.shape:
            raise ValueError(f"output mask shape {out_mask.shape} does not match output {a.shape}")
        y = a * out_mask
    else:
        y = a
    cache = LayerCache(layer, X, None, pre, a, y, MaskSet(None, out_mask), batched)
    return _unbatch(y, batched), cache


def dense_forward_eval(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    X, batched = _as_batch(x, layer.n_in)
    y = activate(X @ layer.W.T + layer.b, layer.act)
    if layer.dropout is not None:
        y = y * layer.dropout
    return _unbatch(y, batched)


def dense_backward(layer: DenseLayer, cache: LayerCache, dy: np.ndarray):
    """Return ``(dW, db, dx)`` for the forward pass recorded in ``cache``."""
    if cache.owner is not layer or cache.branch is not None:
        raise ValueError("cache was not produced by this dense layer")
    dY = np.asarray(dy, dtype=np.float64)
    dY = dY if cache.batched else dY[None]
    if dY.shape != cache.y.shape:
        raise ValueError(f"upstream gradient shape {dY.shape} does not match output {cache.y.shape}")
    da = dY * cache.masks.output if cache.masks.output is not None else dY
    dh = activate_backward(cache.pre, cache.act_out, da, layer.act)
    dW = dh.T @ cache.x
    db = dh.sum(axis=0)
    dx = dh @ layer.W
    return dW, db, _unbatch(dx, cache.batched)


# --- STE -------------------------------------------------------------------


def _branch_outputs(layer: STELayer, X: np.ndarray) -> np.ndarray:
    """Noise-free ``W_i x + b_i`` for every branch, shape ``(B, A, N)``."""
    A, N, M = layer.Ws.shape
    Z = X @ layer.Ws.reshape(A * N, M).T
    return Z.reshape(X.shape[0], A, N) + layer.bs


def ste_preactivation_train(layer: STELayer, x: np.ndarray, masks: MaskSet):
    """Return ``(branch, pre)``: noisy branch outputs and their average."""
    X, batched = _as_batch(x, layer.n_in)
    branch_mask = _mask_batch(masks.branch, batched)
    A, N, M = layer.Ws.shape
    B = X.shape[0]
    if layer.noise == "dropout":
        if branch_mask is None or branch_mask.shape != (B, A, N):
            got = None if branch_mask is None else branch_mask.shape
            raise ValueError(f"dropout STE layer needs branch masks of shape {(B, A, N)}, got {got}")
        branch = branch_mask * _branch_outputs(layer, X)
    else:
        if branch_mask is None or branch_mask.shape != (B, A, N, M):
            got = None if branch_mask is None else branch_mask.shape
            raise ValueError(f"dropconnect STE layer needs branch masks of shape {(B, A, N, M)}, got {got}")
        branch = np.matmul(branch_mask * layer.Ws, X[:, None, :, None])[..., 0] + layer.bs
    pre = branch.mean(axis=1)
    return branch, pre


def ste_forward_train(layer: STELayer, x: np.ndarray, masks: MaskSet):
    """Train-mode forward with fixed masks; returns ``(y, cache)``.

    Dropout mode masks each whole branch output ``W_i x + b_i``; dropconnect
    mode masks the weights only and leaves the bias untouched.
    """
    X, batched = _as_batch(x, layer.n_in)
    branch, pre = ste_preactivation_train(layer, X, MaskSet(_mask_batch(masks.branch, batched)))
    a = activate(pre, layer.act)
    out_mask = _mask_batch(masks.output, batched)
    if layer.p_out is not None:
        if out_mask is None or out_mask.shape != a.shape:
            got = None if out_mask is None else out_mask.shape
            raise ValueError(f"layer has output dropout; output mask must have shape {a.shape}, got {got}")
        y = a * out_mask
    else:
        if out_mask is not None:
            raise ValueError("output mask given for a layer without output dropout")
        y = a
    stored = MaskSet(_mask_batch(masks.branch, batched), out_mask)
    cache = LayerCache(layer, X, branch, pre, a, y, stored, batched)
    return _unbatch(y, batched), cache


def ste_preactivation_eval(layer: STELayer, x: np.ndarray) -> np.ndarray:
    """Expected pre-activation: every mask entry replaced by its mean ``p``."""
    X, batched = _as_batch(x, layer.n_in)
    Z = _branch_outputs(layer, X)
    if layer.noise == "dropout":
        pre = layer.p * Z.mean(axis=1)
    else:
        lin = Z - layer.bs
        pre = layer.p * lin.mean(axis=1) + layer.bs.mean(axis=0)
    return _unbatch(pre, batched)


def ste_forward_eval(layer: STELayer, x: np.ndarray) -> np.ndarray:
    X, batched = _as_batch(x, layer.n_in)
    y = activate(ste_preactivation_eval(layer, X), layer.act)
    if layer.p_out is not None:
        y = y * layer.p_out
    return _unbatch(y, batched)


def ste_backward(layer: STELayer, cache: LayerCache, dy: np.ndarray):
    """Return ``(dWs, dbs, dx)`` with masks held fixed at their cached values."""
    if cache.owner is not layer or cache.branch is None:
        raise ValueError("cache was not produced by this STE layer")
    A, N, M = layer.Ws.shape
    if cache.branch.shape[1:] != (A, N) or cache.x.shape[1] != M:
        raise ValueError("stale cache: layer shape changed since the forward pass")
    dY = np.asarray(dy, dtype=np.float64)
    dY = dY if cache.batched else dY[None]
    if dY.shape != cache.y.shape:
        raise ValueError(f"upstream gradient shape {dY.shape} does not match output {cache.y.shape}")
    da = dY * cache.masks.output if cache.masks.output is not None else dY
    dpre = activate_backward(cache.pre, cache.act_out, da, layer.act)
    # every branch enters the average with weight 1/A
    dbranch = np.broadcast_to(dpre[:, None, :] / A, cache.branch.shape)
    X = cache.x
    mask = cache.masks.branch
    if layer.noise == "dropout":
        dz = dbranch * mask  # (B, A, N)
        dWs = np.einsum("ban,bm->anm", dz, X, optimize=True)
        dbs = dz.sum(axis=0)
        dx = dz.reshape(X.shape[0], A * N) @ layer.Ws.reshape(A * N, M)
    else:
        dz = np.ascontiguousarray(dbranch)
        dWs = np.einsum("banm,ban,bm->anm", mask, dz, X)
        dbs = dz.sum(axis=0)
        dx = np.matmul(dz[:, :, None, :], mask * layer.Ws).sum(axis=1)[:, 0]
    return dWs, dbs, _unbatch(dx, cache.batched)


def forward_train(layer, x, masks):
    if isinstance(layer, STELayer):
        return ste_forward_train(layer, x, masks)
    return dense_forward_train(layer, x, masks)


def forward_eval(layer, x):
    if isinstance(layer, STELayer):
        return ste_forward_eval(layer, x)
    return dense_forward_eval(layer, x)


def backward(layer, cache, dy):
    if isinstance(layer, STELayer):
        return ste_backward(layer, cache, dy)
    return dense_backward(layer, cache, dy)
