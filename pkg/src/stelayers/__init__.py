"""Stochastically trained ensemble (STE) layers on a small numpy network engine.

An STE layer replaces a dense layer with ``A`` independently initialised weight
matrices and biases. During training each branch gets its own dropout or
dropconnect noise and the branch outputs are averaged before the activation.
At test time the branches fold into one dense layer, see :mod:`stelayers.collapse`.
"""

from .core import affine, bernoulli_mask, glorot_uniform, make_rng
from .layers import DenseLayer, STELayer
from .collapse import collapse_ste, collapse_network, count_parameters, verify_collapse
from .network import LayerSpec, ModelSpec, Network
from .optimizer import TrainConfig, lr_at, nesterov_step
from .trainer import evaluate, run_experiment, train, analyze_activations

__all__ = [
    "affine",
    "bernoulli_mask",
    "glorot_uniform",
    "make_rng",
    "DenseLayer",
    "STELayer",
    "collapse_ste",
    "collapse_network",
    "count_parameters",
    "verify_collapse",
    "LayerSpec",
    "ModelSpec",
    "Network",
    "TrainConfig",
    "lr_at",
    "nesterov_step",
    "evaluate",
    "run_experiment",
    "train",
    "analyze_activations",
]

__version__ = "0.1.0"
