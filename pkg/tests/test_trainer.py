import math
from pathlib import Path

import numpy as np
import pytest

from stelayers.checkpoint import dumps
from stelayers.collapse import collapse_network
from stelayers.data import Dataset
from stelayers.layers import STELayer
from stelayers.network import LayerSpec, ModelSpec, Network, mlp_spec
from stelayers.optimizer import TrainConfig
from stelayers.trainer import (
    NumericAbort,
    SummaryRow,
    analyze_activations,
    evaluate,
    run_experiment,
    table_csv,
    table_text,
    train,
)

DATA = Path(__file__).parent / "data"


def blobs(n=200, seed=0, margin=1.0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    X = rng.standard_normal((n, 2))
    X[:, 0] = np.abs(X[:, 0]) + margin
    X[y == 0, 0] *= -1
    return Dataset(X, y)


def small(config="ste-dropout", A=3):
    return mlp_spec(2, [8], 2, config, A=A)


def test_zero_epochs_returns_initial_model():
    spec = small()
    out = train(spec, TrainConfig(epochs=0, seed=4), blobs())
    init = Network.build(spec, 4)
    assert all(np.array_equal(a, b) for a, b in zip(out.model.params(), init.params()))
    assert out.result.train_loss == [] and out.result.val_loss == [] and out.best is None


def test_separable_toy_set_is_fit():
    ds = blobs()
    spec = mlp_spec(2, [16], 2, "none")
    out = train(spec, TrainConfig(lr=0.1, epochs=50, batch_size=16, seed=0), ds)
    _, acc = evaluate(out.model, ds)
    assert acc >= 99.0


def test_nan_input_aborts_with_location():
    ds = blobs()
    ds.X[37, 1] = np.nan
    with pytest.raises(NumericAbort) as info:
        train(small(), TrainConfig(epochs=2, batch_size=32), ds)
    assert info.value.epoch == 0
    assert "epoch 0, batch" in str(info.value)


def test_feature_mismatch_rejected():
    with pytest.raises(ValueError, match="3 features"):
        train(small(), TrainConfig(epochs=1), Dataset(np.zeros((20, 3)), np.zeros(20, dtype=int)))


def test_uniform_logits_give_log_k():
    spec = ModelSpec(4, (LayerSpec("dense", 10, act="softmax"),))
    net = Network.build(spec, 0)
    net.layers[0].W[...] = 0
    rng = np.random.default_rng(0)
    ds = Dataset(rng.standard_normal((50, 4)), np.arange(50) % 10)
    loss, acc = evaluate(net, ds)
    assert loss == pytest.approx(math.log(10), abs=1e-12)
    # every prediction ties, argmax picks class 0, which is 10% of labels
    assert acc == pytest.approx(10.0)


@pytest.mark.parametrize("config", ["ste-dropout", "ste-dropconnect"])
def test_evaluate_matches_collapsed_model(config):
    ds = blobs(100, seed=1)
    out = train(small(config), TrainConfig(lr=0.2, epochs=3, batch_size=20), ds)
    loss, acc = evaluate(out.model, ds)
    closs, cacc = evaluate(collapse_network(out.model), ds)
    assert abs(loss - closs) < 1e-9 and acc == cacc


def test_empty_dataset_rejected():
    net = Network.build(small(), 0)
    with pytest.raises(ValueError, match="empty"):
        evaluate(net, Dataset(np.zeros((0, 2)), np.zeros(0, dtype=int)))


def test_training_is_bitwise_deterministic():
    cfg = TrainConfig(lr=0.3, epochs=3, batch_size=16, seed=9)
    a = train(small("ste-dropconnect"), cfg, blobs(), blobs(50, 2))
    b = train(small("ste-dropconnect"), cfg, blobs(), blobs(50, 2))
    ra, rb = a.result, b.result
    assert (ra.train_loss, ra.val_loss, ra.lr, ra.test_loss, ra.test_acc, ra.best_epoch) == \
           (rb.train_loss, rb.val_loss, rb.lr, rb.test_loss, rb.test_acc, rb.best_epoch)
    assert dumps(a.last) == dumps(b.last)


def test_returned_model_is_best_epoch():
    ds = blobs(300, margin=0.0)
    cfg = TrainConfig(lr=0.5, epochs=8, batch_size=8, seed=1)
    out = train(small(), cfg, ds)
    r = out.result
    assert r.best_epoch == int(np.argmin(r.val_loss))
    from stelayers.data import split
    _, val = split(ds, cfg.val_fraction, cfg.seed)
    assert evaluate(out.model, val)[0] == min(r.val_loss)


def test_resume_equals_uninterrupted():
    ds = blobs()
    full = train(small(), TrainConfig(lr=0.2, epochs=3, batch_size=32, seed=5), ds)
    head = train(small(), TrainConfig(lr=0.2, epochs=2, batch_size=32, seed=5), ds)
    tail = train(small(), TrainConfig(lr=0.2, epochs=3, batch_size=32, seed=5), ds, resume=head.last)
    assert dumps(tail.last) == dumps(full.last)
    assert tail.result.val_loss == full.result.val_loss[2:]


def test_single_seed_table_flags_n1():
    specs = {"none": small("none"), "ste-dropout": small()}
    table = run_experiment(specs, TrainConfig(epochs=1, batch_size=50), blobs(), blobs(40, 3), seeds=[0],
                           dataset_name="toy")
    csv_text = table.to_csv()
    lines = csv_text.strip().splitlines()
    assert lines[0] == "dataset,config,n,loss_mean,loss_std,acc_mean,acc_std,flag"
    assert all(line.endswith(",0,n=1") for line in lines[1:])
    assert "(n=1)" in table.to_text()


def test_experiment_std_uses_sample_denominator():
    specs = {"none": small("none")}
    table = run_experiment(specs, TrainConfig(epochs=1, batch_size=50), blobs(), blobs(40, 3), seeds=[0, 1, 2])
    row = table.row("none")
    assert row.loss[1] == pytest.approx(np.std(row.losses, ddof=1))


def test_experiment_requires_a_seed():
    with pytest.raises(ValueError):
        run_experiment({"none": small("none")}, TrainConfig(), blobs(), blobs(), seeds=[])


def test_golden_table_formatting():
    rows = [
        SummaryRow("CIFAR-10", "dropout", 5, 1.266, 0.01, 56.4, 0.3),
        SummaryRow("CIFAR-10", "ste-dropout", 5, 1.236, 0.003, 57.0, 0.2),
    ]
    assert table_csv(rows) == (DATA / "golden_cifar10_mlp.csv").read_text()
    text = table_text(rows).splitlines()
    assert text[0].split(" | ")[0].strip() == "Dataset"
    assert "dropout Loss" in text[0] and "ste-dropout Accuracy" in text[0]
    assert "1.266 ± 0.010" in text[2] and "57.0 ± 0.20" in text[2]


def test_identical_branches_fully_correlated(rng):
    net = Network.build(mlp_spec(5, [6], 3, "ste-dropout", A=4), 0)
    layer = net.layers[0]
    layer.Ws[...] = layer.Ws[0]
    layer.bs[...] = layer.bs[0]
    res = analyze_activations(net, rng.standard_normal((3, 5)), 0)
    assert res.branch.shape == (3, 4, 6)
    np.testing.assert_allclose(res.corr, np.ones((4, 4)), atol=1e-12)


def test_fresh_branches_decorrelated(rng):
    net = Network.build(mlp_spec(64, [2048], 2, "ste-dropout", A=8), 3)
    res = analyze_activations(net, rng.standard_normal((2, 64)), 0)
    assert abs(res.mean_offdiag) < 0.1
    np.testing.assert_allclose(np.diag(res.corr), 1.0)


def test_branch_dump_matches_definition(rng):
    net = Network.build(mlp_spec(4, [5, 3], 2, "ste-dropconnect", A=2), 1)
    x = rng.standard_normal(4)
    res = analyze_activations(net, x, 1)
    h = net.forward_eval(x[None], upto=1)[0]
    layer = net.layers[1]
    assert isinstance(layer, STELayer)
    for i in range(layer.A):
        np.testing.assert_allclose(res.branch[0, i], layer.Ws[i] @ h + layer.bs[i], rtol=1e-13)


def test_non_ste_layer_rejected():
    net = Network.build(small(), 0)
    with pytest.raises(ValueError, match="not an STE layer"):
        analyze_activations(net, np.zeros((1, 2)), 1)
    with pytest.raises(ValueError):
        analyze_activations(net, np.zeros((1, 2)), 7)
