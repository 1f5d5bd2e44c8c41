"""How similar do the branches of an STE layer become during training?

At initialization the A branches are independent random projections, so their
activation vectors are nearly uncorrelated. Training pulls them toward a shared
solution, but they stay distinct.

Run: python demos/branch_correlation.py   (needs scikit-learn)
"""

import tempfile

import numpy as np

from stelayers import Network, TrainConfig, analyze_activations, train
from stelayers.data import normalize
from stelayers.desk import load_digits_idx, write_digits_idx
from stelayers.network import mlp_spec

with tempfile.TemporaryDirectory() as tmp:
    train_ds, test_ds = normalize(*load_digits_idx(write_digits_idx(tmp)))

spec = mlp_spec(64, [128, 128], 10, "ste-dropout", A=8)
init = Network.build(spec, seed=0)
trained = train(spec, TrainConfig(lr=1.0, decay=1e-4, epochs=60, seed=0), train_ds).model

np.set_printoptions(precision=2, suppress=True)
for layer in (0, 1):
    before = analyze_activations(init, test_ds.X, layer)
    after = analyze_activations(trained, test_ds.X, layer)
    print(f"hidden layer {layer}: mean off-diagonal correlation "
          f"{before.mean_offdiag:.3f} at init, {after.mean_offdiag:.3f} trained "
          f"(largest pair {after.max_offdiag:.3f})")
    print(after.corr, "\n")
