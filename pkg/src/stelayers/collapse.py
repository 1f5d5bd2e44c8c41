"""Folding STE layers into single dense layers for inference, and checking the result.

When the test-time noise operation is an affine map ``C (W_i x + b_i) + d``
of every branch, the averaged layer is itself affine::

    W_eff = mean_i(C W_i)        b_eff = mean_i(C b_i + d)

With dropout noise ``C = p I`` and ``d = 0``. With dropconnect the expectation
scales the weights by ``p`` and leaves the (unmasked) bias alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from .layers import DenseLayer, STELayer, forward_eval
from .network import ModelSpec, Network


def fold_affine(Ws: np.ndarray, bs: np.ndarray, C: np.ndarray, d: np.ndarray):
    """Dense parameters equivalent to averaging ``C (W_i x + b_i) + d`` over the branches."""
    Ws = np.asarray(Ws, dtype=np.float64)
    bs = np.asarray(bs, dtype=np.float64)
    N = Ws.shape[1]
    if C.shape != (N, N) or d.shape != (N,):
        raise ValueError(f"C must be {(N, N)} and d {(N,)}, got {C.shape} and {d.shape}")
    W_eff = np.mean(np.einsum("ij,ajk->aik", C, Ws), axis=0)
    b_eff = np.mean(bs @ C.T + d, axis=0)
    return W_eff, b_eff


def collapse_ste(layer: Union[STELayer, DenseLayer]) -> DenseLayer:
    """Dense layer computing the same eval-mode function as ``layer``.

    The output-dropout keep probability is carried as the dense layer's
    ``dropout`` and applied after the activation at eval time. Dense layers
    are returned as copies.
    """
    if isinstance(layer, DenseLayer):
        return DenseLayer(layer.W.copy(), layer.b.copy(), layer.act, layer.dropout)
    if layer.noise == "dropout":
        W_eff = layer.p * layer.Ws.mean(axis=0)
        b_eff = layer.p * layer.bs.mean(axis=0)
    else:
        W_eff = layer.p * layer.Ws.mean(axis=0)
        b_eff = layer.bs.mean(axis=0)
    return DenseLayer(W_eff, b_eff, layer.act, layer.p_out)


def collapse_network(net: Network) -> Network:
    return Network([collapse_ste(l) for l in net.layers])


@dataclass
class CollapseReport:
    trials: int
    tol: float
    max_abs_diff: float
    worst_trial: int
    passed: bool

    def __str__(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict}: max |eval - collapsed| = {self.max_abs_diff:.3e} "
                f"over {self.trials} inputs (tol {self.tol:.1e}, worst input #{self.worst_trial})")


def _trial_inputs(n_in: int, trials: int, rng: np.random.Generator) -> np.ndarray:
    # first trial is x = 0, which exercises the bias path alone
    X = rng.standard_normal((trials, n_in))
    X[0] = 0.0
    return X


def _report(a: np.ndarray, b: np.ndarray, trials: int, tol: float) -> CollapseReport:
    diff = np.abs(a - b).reshape(trials, -1).max(axis=1)
    diff = np.where(np.isfinite(diff), diff, np.inf)
    worst = int(np.argmax(diff))
    m = float(diff[worst])
    return CollapseReport(trials, tol, m, worst, bool(m < tol))


def verify_collapse(layer, collapsed: DenseLayer, trials: int = 100, tol: float = 1e-9,
                    rng: Optional[np.random.Generator] = None) -> CollapseReport:
    """Compare eval-mode ``layer`` against ``collapsed`` on ``trials`` random inputs."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if (layer.n_in, layer.n_out) != (collapsed.n_in, collapsed.n_out):
        raise ValueError(f"shape mismatch: layer {layer.n_in}->{layer.n_out}, "
                         f"collapsed {collapsed.n_in}->{collapsed.n_out}")
    rng = rng if rng is not None else np.random.default_rng(0)
    X = _trial_inputs(layer.n_in, trials, rng)
    with np.errstate(all="ignore"):
        return _report(forward_eval(layer, X), forward_eval(collapsed, X), trials, tol)


def verify_network_collapse(net: Network, collapsed: Network, trials: int = 100, tol: float = 1e-9,
                            rng: Optional[np.random.Generator] = None, X: Optional[np.ndarray] = None
                            ) -> CollapseReport:
    """End-to-end version of :func:`verify_collapse` on the network logits.

    ``X`` overrides the random inputs (e.g. to check a whole test set).
    """
    if len(net.layers) != len(collapsed.layers) or net.input_dim != collapsed.input_dim:
        raise ValueError("networks have different topologies")
    if X is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        X = _trial_inputs(net.input_dim, trials, rng)
    with np.errstate(all="ignore"):
        return _report(net.forward_eval(X), collapsed.forward_eval(X), X.shape[0], tol)


@dataclass
class LayerCount:
    index: int
    kind: str
    n_in: int
    n_out: int
    A: int
    trained: int
    collapsed: int


@dataclass
class ParamCount:
    layers: List[LayerCount] = field(default_factory=list)

    @property
    def trained(self) -> int:
        return sum(l.trained for l in self.layers)

    @property
    def collapsed(self) -> int:
        return sum(l.collapsed for l in self.layers)


def count_parameters(model: Union[Network, ModelSpec, STELayer, DenseLayer]) -> ParamCount:
    """Trainable parameters as trained (``A N (M + 1)`` per STE layer) and after collapse (``N (M + 1)``)."""
    if isinstance(model, ModelSpec):
        dims = [model.input_dim] + [ls.units for ls in model.layers]
        shapes = [(ls.kind, m, n, ls.A if ls.kind == "ste" else 1)
                  for ls, m, n in zip(model.layers, dims[:-1], dims[1:])]
    else:
        layers = [model] if isinstance(model, (STELayer, DenseLayer)) else model.layers
        shapes = [("ste", l.n_in, l.n_out, l.A) if isinstance(l, STELayer) else ("dense", l.n_in, l.n_out, 1)
                  for l in layers]
    out = ParamCount()
    for i, (kind, m, n, A) in enumerate(shapes):
        dense = n * (m + 1)
        out.layers.append(LayerCount(i, kind, m, n, A, A * dense, dense))
    return out


def format_millions(n: int) -> str:
    return f"{n / 1e6:.1f}M"
