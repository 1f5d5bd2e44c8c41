import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stelayers.collapse import (
    _trial_inputs,
    collapse_network,
    collapse_ste,
    count_parameters,
    fold_affine,
    format_millions,
    verify_collapse,
    verify_network_collapse,
)
from stelayers.layers import DenseLayer, STELayer, dense_forward_eval
from stelayers.network import Network, mlp_spec


def test_identity_collapse_is_exact(rng):
    W, b = rng.standard_normal((3, 4)), rng.standard_normal(3)
    for noise in ("dropout", "dropconnect"):
        d = collapse_ste(STELayer(W[None], b[None], 1.0, noise, None))
        assert d.W.tobytes() == W.tobytes() and d.b.tobytes() == b.tobytes()


def test_two_branch_average():
    d = collapse_ste(STELayer([[[2.0]], [[4.0]]], [[0.0], [0.0]], 0.5, "dropout", None))
    np.testing.assert_array_equal(d.W, [[1.5]])


def test_dropconnect_bias_not_scaled():
    d = collapse_ste(STELayer([[[2.0]], [[4.0]]], [[1.0], [3.0]], 0.5, "dropconnect", None))
    np.testing.assert_array_equal(d.W, [[1.5]])
    np.testing.assert_array_equal(d.b, [2.0])


def test_output_dropout_carried_over():
    d = collapse_ste(STELayer(np.ones((2, 3, 4)), np.zeros((2, 3)), 0.5, "dropout", 0.25, "relu"))
    assert d.dropout == 0.25 and d.act == "relu"


def test_general_affine_fold_matches_brute_force(rng):
    A, N, M = 3, 4, 5
    Ws, bs = rng.standard_normal((A, N, M)), rng.standard_normal((A, N))
    C, d = rng.standard_normal((N, N)), rng.standard_normal(N)
    W_eff, b_eff = fold_affine(Ws, bs, C, d)
    for _ in range(20):
        x = rng.standard_normal(M)
        brute = sum(C @ (Ws[i] @ x + bs[i]) + d for i in range(A)) / A
        assert np.abs(W_eff @ x + b_eff - brute).max() < 1e-12


def test_fold_affine_with_dropout_transform_matches_collapse(rng):
    layer = STELayer(rng.standard_normal((4, 3, 5)), rng.standard_normal((4, 3)), 0.3, "dropout", None)
    W_eff, b_eff = fold_affine(layer.Ws, layer.bs, 0.3 * np.eye(3), np.zeros(3))
    d = collapse_ste(layer)
    np.testing.assert_allclose(d.W, W_eff, rtol=0, atol=1e-15)
    np.testing.assert_allclose(d.b, b_eff, rtol=0, atol=1e-15)


def test_verify_own_collapse_passes(rng):
    layer = STELayer(rng.standard_normal((5, 6, 7)), rng.standard_normal((5, 6)), 0.5, "dropout", 0.5)
    report = verify_collapse(layer, collapse_ste(layer), trials=100, tol=1e-9, rng=rng)
    assert report.passed and report.max_abs_diff < 1e-9 and report.trials == 100


def test_verify_catches_bias_perturbation(rng):
    layer = STELayer(rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 3)), 0.5, "dropout", 0.5, "identity")
    bad = collapse_ste(layer)
    bad.b[1] += 1e-3
    report = verify_collapse(layer, bad, trials=10, tol=1e-9, rng=rng)
    assert not report.passed
    # the perturbation reaches the output scaled by the output-dropout factor
    assert report.max_abs_diff == pytest.approx(0.5e-3, rel=1e-6)
    assert "FAIL" in str(report)


def test_trials_start_with_zero_input(rng):
    X = _trial_inputs(4, 5, rng)
    assert not np.any(X[0]) and np.all(X[1:] != 0)


def test_verify_shape_mismatch(rng):
    layer = STELayer(np.ones((2, 3, 4)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        verify_collapse(layer, DenseLayer(np.ones((3, 5)), np.zeros(3)))


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(["dropout", "dropconnect"]), st.integers(1, 8), st.integers(1, 12), st.integers(1, 12),
       st.floats(0.05, 1.0), st.sampled_from([None, 0.5, 0.8]), st.sampled_from(["relu", "identity"]),
       st.integers(0, 2**32 - 1))
def test_collapse_equivalence_property(noise, A, N, M, p, p_out, act, seed):
    r = np.random.default_rng(seed)
    layer = STELayer(r.standard_normal((A, N, M)), r.standard_normal((A, N)), p, noise, p_out, act)
    assert verify_collapse(layer, collapse_ste(layer), trials=100, tol=1e-9, rng=r).passed


def test_identical_members_collapse_to_scaled_weight(rng):
    W, b = rng.standard_normal((3, 4)), rng.standard_normal(3)
    layer = STELayer(np.stack([W] * 6), np.stack([b] * 6), 0.5, "dropout", None)
    d = collapse_ste(layer)
    np.testing.assert_allclose(d.W, 0.5 * W, rtol=1e-15, atol=0)
    np.testing.assert_allclose(d.b, 0.5 * b, rtol=1e-15, atol=0)


def test_collapsed_dense_layer_is_a_copy(rng):
    layer = DenseLayer(rng.standard_normal((2, 3)), rng.standard_normal(2), "relu", 0.5)
    d = collapse_ste(layer)
    assert d.W is not layer.W
    assert np.array_equal(d.W, layer.W) and np.array_equal(d.b, layer.b)
    assert (d.act, d.dropout) == (layer.act, layer.dropout)


def test_network_collapse_end_to_end(rng):
    for config in ("ste-dropout", "ste-dropconnect", "dropout", "none"):
        net = Network.build(mlp_spec(6, [5, 4], 3, config, A=3), seed=1)
        for p in net.params():
            p += 0.1 * rng.standard_normal(p.shape)
        collapsed = collapse_network(net)
        assert all(isinstance(l, DenseLayer) for l in collapsed.layers)
        assert verify_network_collapse(net, collapsed, trials=100, tol=1e-9, rng=rng).passed


# --- parameter accounting ---------------------------------------------------------


def test_mlp_parameter_counts_match_table():
    dense = count_parameters(mlp_spec(3072, [2048, 2048], 10, "dropout"))
    ste = count_parameters(mlp_spec(3072, [2048, 2048], 10, "ste-dropout", A=8))
    # 2048*3073 + 2048*2049 + 10*2049, by hand
    assert dense.trained == dense.collapsed == 10_510_346
    assert ste.collapsed == 10_510_346
    assert ste.trained == 8 * (2048 * 3073 + 2048 * 2049) + 10 * 2049 == 83_939_338
    assert (format_millions(dense.trained), format_millions(ste.trained)) == ("10.5M", "83.9M")


def test_hundred_class_counts_match_table():
    dense = count_parameters(mlp_spec(3072, [2048, 2048], 100, "none"))
    ste = count_parameters(mlp_spec(3072, [2048, 2048], 100, "ste-dropconnect", A=8))
    assert (format_millions(dense.trained), format_millions(ste.trained)) == ("10.7M", "84.1M")


def test_single_branch_counts_equal_dense():
    ste = count_parameters(mlp_spec(20, [7, 5], 3, "ste-dropout", A=1))
    dense = count_parameters(mlp_spec(20, [7, 5], 3, "none"))
    assert ste.trained == dense.trained == ste.collapsed


def test_counts_of_built_network_and_collapse(rng):
    net = Network.build(mlp_spec(9, [6, 6], 4, "ste-dropout", A=4), seed=0)
    counts = count_parameters(net)
    assert counts.trained == sum(p.size for p in net.params())
    assert count_parameters(collapse_network(net)).trained == counts.collapsed
    layer = net.layers[0]
    assert count_parameters(collapse_ste(layer)).trained == count_parameters(DenseLayer(np.zeros((6, 9)), np.zeros(6))).trained
    assert [l.kind for l in counts.layers] == ["ste", "ste", "dense"]
