"""An STE layer trains A noisy affine maps but tests as a single dense layer.

Run: python demos/collapse_equivalence.py
"""

import numpy as np

from stelayers import STELayer, collapse_ste, verify_collapse
from stelayers.layers import forward_eval, ste_preactivation_eval, ste_preactivation_train

rng = np.random.default_rng(0)

# Eight branches mapping 32 inputs to 16 units. Internal dropout keeps each
# branch output with probability 0.5, and the averaged, activated result goes
# through one more dropout with keep probability 0.5.
layer = STELayer(
    Ws=rng.standard_normal((8, 16, 32)) * 0.2,
    bs=rng.standard_normal((8, 16)) * 0.1,
    p=0.5,
    noise="dropout",
    p_out=0.5,
)

dense = collapse_ste(layer)
print(f"STE layer: {layer.A} x {layer.n_out}x{layer.n_in} weights -> dense {dense.W.shape}")
print(f"  folded bias scale (p/A): {layer.p / layer.A}")
print(f"  output dropout kept as eval-time factor: {dense.dropout}")

# The collapsed layer is the eval-mode STE layer, not an approximation of it.
x = rng.standard_normal(32)
active = np.flatnonzero(forward_eval(layer, x))[:4]
print("  eval STE   :", np.round(forward_eval(layer, x)[active], 6))
print("  dense      :", np.round(forward_eval(dense, x)[active], 6))
print(" ", verify_collapse(layer, dense, trials=500))

# Dropconnect masks weights but never biases, so only the weights pick up p.
dc = STELayer(layer.Ws, layer.bs, p=0.5, noise="dropconnect", p_out=None)
dc_dense = collapse_ste(dc)
print("\ndropconnect bias equals the plain branch mean:",
      np.allclose(dc_dense.b, dc.bs.mean(axis=0)))
print(" ", verify_collapse(dc, dc_dense, trials=500))

# A train-mode pass averages random masks. Its sample mean approaches eval mode.
streams = [np.random.default_rng([1, i]) for i in range(layer.A + 1)]
for k in (10, 1_000, 50_000):
    X = np.broadcast_to(x, (k, 32))
    _, pre = ste_preactivation_train(layer, X, layer.sample_masks(k, streams))
    gap = np.abs(pre.mean(axis=0) - ste_preactivation_eval(layer, x)).max()
    print(f"  {k:>6} mask draws: max gap to eval pre-activation {gap:.4f}")
