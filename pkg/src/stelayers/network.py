"""Model description and the feedforward network built from it."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import layers as L
from .core import INIT_STREAM, MASK_STREAM, RngBank, glorot_uniform, make_rng
from .layers import DenseLayer, STELayer

CONFIG_NAMES = ("none", "dropout", "ste-dropout", "ste-dropconnect")


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "dense" or "ste"
    units: int
    act: str = "relu"
    dropout: Optional[float] = None  # dense only: output keep probability
    A: int = 1
    p: float = 0.5
    noise: str = "dropout"
    p_out: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("dense", "ste"):
            raise ValueError(f"layer kind must be 'dense' or 'ste', got {self.kind!r}")
        if self.units < 1:
            raise ValueError(f"units must be >= 1, got {self.units}")
        if self.kind == "ste" and self.A < 1:
            raise ValueError(f"averaging factor must be >= 1, got {self.A}")


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    layers: Tuple[LayerSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if not self.layers:
            raise ValueError("a model needs at least one layer")
        if self.layers[-1].kind != "dense":
            raise ValueError("the output layer must be a dense layer")
        if self.layers[-1].dropout is not None:
            raise ValueError("the output layer cannot use dropout")
        for i, ls in enumerate(self.layers[:-1]):
            if ls.act == "softmax":
                raise ValueError(f"softmax is only allowed on the output layer (layer {i})")

    @property
    def n_classes(self) -> int:
        return self.layers[-1].units


def mlp_spec(input_dim: int, hidden: Sequence[int], n_classes: int, config: str = "ste-dropout",
             A: int = 8, p: float = 0.5, p_out: Optional[float] = 0.5) -> ModelSpec:
    """ReLU MLP with a softmax dense output layer, hidden layers set up per ``config``.

    ``config`` is one of ``none`` (plain dense), ``dropout`` (dense + output
    dropout ``p``), ``ste-dropout`` / ``ste-dropconnect`` (STE layers with
    averaging factor ``A``, internal noise ``p`` and output dropout ``p_out``).
    """
    if config not in CONFIG_NAMES:
        raise ValueError(f"config must be one of {CONFIG_NAMES}, got {config!r}")
    hidden_specs = []
    for units in hidden:
        if config == "none":
            hidden_specs.append(LayerSpec("dense", units))
        elif config == "dropout":
            hidden_specs.append(LayerSpec("dense", units, dropout=p))
        else:
            noise = config.split("-", 1)[1]
            hidden_specs.append(LayerSpec("ste", units, A=A, p=p, noise=noise, p_out=p_out))
    return ModelSpec(input_dim, tuple(hidden_specs) + (LayerSpec("dense", n_classes, act="softmax"),))


def _logit_view(layer: DenseLayer) -> DenseLayer:
    """Same parameters, identity activation: the output layer seen as a logit producer."""
    view = DenseLayer.__new__(DenseLayer)
    view.W, view.b, view.act, view.dropout = layer.W, layer.b, "identity", layer.dropout
    return view


class Network:
    """Ordered list of dense/STE layers. The forward passes return logits."""

    def __init__(self, layers: List):
        if not layers:
            raise ValueError("a network needs at least one layer")
        for a, b in zip(layers[:-1], layers[1:]):
            if a.n_out != b.n_in:
                raise ValueError(f"layer dimensions do not chain: {a.n_out} -> {b.n_in}")
        if isinstance(layers[-1], STELayer):
            raise ValueError("the output layer must be a dense layer")
        self.layers = list(layers)

    @classmethod
    def build(cls, spec: ModelSpec, seed: int) -> "Network":
        """Glorot-uniform weights and zero biases; branch ``i`` of layer ``l`` uses stream (init, l, i)."""
        built = []
        fan_in = spec.input_dim
        for l, ls in enumerate(spec.layers):
            if ls.kind == "dense":
                W = glorot_uniform(fan_in, ls.units, make_rng(seed, INIT_STREAM, l, 0))
                built.append(DenseLayer(W, np.zeros(ls.units), ls.act, ls.dropout))
            else:
                Ws = np.stack([glorot_uniform(fan_in, ls.units, make_rng(seed, INIT_STREAM, l, i))
                               for i in range(ls.A)])
                built.append(STELayer(Ws, np.zeros((ls.A, ls.units)), ls.p, ls.noise, ls.p_out, ls.act))
            fan_in = ls.units
        return cls(built)

    @property
    def input_dim(self) -> int:
        return self.layers[0].n_in

    @property
    def n_classes(self) -> int:
        return self.layers[-1].n_out

    def params(self) -> List[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def set_params(self, values: Sequence[np.ndarray]) -> None:
        """Copy ``values`` into the parameter arrays in place."""
        targets = self.params()
        if len(values) != len(targets):
            raise ValueError(f"expected {len(targets)} arrays, got {len(values)}")
        for t, v in zip(targets, values):
            if t.shape != v.shape:
                raise ValueError(f"shape mismatch {t.shape} vs {v.shape}")
            t[...] = v

    def copy(self) -> "Network":
        return Network([dataclasses.replace(l, **{f: getattr(l, f).copy() for f in _array_fields(l)})
                        for l in self.layers])

    def sample_masks(self, batch: int, bank: RngBank) -> list:
        out = []
        for l, layer in enumerate(self.layers):
            n_streams = layer.A + 1 if isinstance(layer, STELayer) else 1
            rngs = [bank.get(MASK_STREAM, l, i) for i in range(n_streams)]
            out.append(layer.sample_masks(batch, rngs))
        return out

    def forward_train(self, X: np.ndarray, masks: list):
        caches = []
        h = X
        last = len(self.layers) - 1
        for l, (layer, m) in enumerate(zip(self.layers, masks)):
            if l == last:
                layer = _logit_view(layer)
            h, cache = L.forward_train(layer, h, m)
            caches.append(cache)
        return h, caches

    def backward(self, caches: list, dlogits: np.ndarray) -> List[np.ndarray]:
        grads: List[np.ndarray] = []
        d = dlogits
        for cache in reversed(caches):
            dW, db, d = L.backward(cache.owner, cache, d)
            grads[:0] = [dW, db]
        return grads

    def forward_eval(self, X: np.ndarray, upto: Optional[int] = None) -> np.ndarray:
        """Eval-mode forward. With ``upto`` the output of the first ``upto`` layers is returned."""
        h = X
        last = len(self.layers) - 1
        stop = len(self.layers) if upto is None else upto
        for l, layer in enumerate(self.layers[:stop]):
            if l == last:
                layer = _logit_view(layer)
            h = L.forward_eval(layer, h)
        return h

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return L.activate(self.forward_eval(X), self.layers[-1].act)


def _array_fields(layer) -> tuple:
    return ("Ws", "bs") if isinstance(layer, STELayer) else ("W", "b")
