"""Regularization comparison on a small digit dataset.

Four steps:
  1. Build 5000 train / 1000 test digit images (8x8, noisy shifted copies of
     scikit-learn's digits; train and test come from different source digits).
  2. Choose a learning rate per configuration by validation loss on seed 0.
  3. Train every configuration on five seeds and tabulate test loss/accuracy.
  4. Print the comparison.

STE layers move their averaged output by roughly p/A of a dense layer's step
for the same gradient scale, so they need a larger learning rate to train
within a short epoch budget. Sharing one learning rate across configurations
leaves them badly under-trained here.

Needs scikit-learn. Run: python demos/desk_experiment.py [--quick]
Takes about four minutes on one core; --quick uses fewer seeds and epochs.
"""

import argparse
import logging
import tempfile

from stelayers import TrainConfig, run_experiment, train
from stelayers.data import normalize
from stelayers.desk import load_digits_idx, write_digits_idx
from stelayers.network import mlp_spec
from stelayers.trainer import ExperimentTable

parser = argparse.ArgumentParser()
parser.add_argument("--quick", action="store_true")
args = parser.parse_args()
seeds, epochs = ([0, 1], 20) if args.quick else (list(range(5)), 60)
logging.basicConfig(level=logging.INFO, format="  %(message)s")

with tempfile.TemporaryDirectory() as tmp:
    train_ds, test_ds = normalize(*load_digits_idx(write_digits_idx(tmp)))
print(f"train {train_ds.X.shape}, test {test_ds.X.shape}")

configs = ("none", "dropout", "ste-dropout")
specs = {c: mlp_spec(64, [128, 128], 10, c, A=8) for c in configs}

print("\nlearning rate by validation loss (seed 0):")
chosen = {}
for c in configs:
    scores = {}
    for lr in (0.03, 0.1, 0.3, 1.0):
        out = train(specs[c], TrainConfig(lr=lr, decay=1e-4, epochs=epochs, seed=0), train_ds)
        scores[lr] = min(out.result.val_loss)
    chosen[c] = min(scores, key=scores.get)
    print(f"  {c:12s} " + "  ".join(f"{lr}: {v:.3f}" for lr, v in scores.items()) + f"  -> {chosen[c]}")

print("\ntest results:")
rows = []
for c in configs:
    cfg = TrainConfig(lr=chosen[c], decay=1e-4, epochs=epochs)
    rows += run_experiment({c: specs[c]}, cfg, train_ds, test_ds, seeds, "desk-digits").runs

print(ExperimentTable(rows).to_text())
