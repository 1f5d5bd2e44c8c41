"""Parameter budget of STE layers before and after collapsing.

The image MLP below takes 3072 inputs through two hidden layers of 2048 units
to 10 classes. Training with A=8 branches per hidden layer costs roughly eight
times the parameters of the network that ships.

Run: python demos/parameter_counts.py
"""

from stelayers import count_parameters
from stelayers.collapse import format_millions
from stelayers.network import mlp_spec

for classes in (10, 100):
    spec = mlp_spec(3072, [2048, 2048], classes, "ste-dropout", A=8)
    counts = count_parameters(spec)
    print(f"{classes}-class MLP")
    for lc in counts.layers:
        print(f"  layer {lc.index} ({lc.kind}, {lc.n_in}->{lc.n_out}, A={lc.A}): "
              f"{lc.trained:>10,} trained, {lc.collapsed:>9,} at test time")
    print(f"  total: {format_millions(counts.trained)} trained, {format_millions(counts.collapsed)} at test time\n")

# Growth is linear in A for the hidden layers only.
for A in (1, 2, 4, 8, 16):
    c = count_parameters(mlp_spec(3072, [2048, 2048], 10, "ste-dropout", A=A))
    print(f"A={A:>2}: {format_millions(c.trained):>7} trained -> {format_millions(c.collapsed)}")
