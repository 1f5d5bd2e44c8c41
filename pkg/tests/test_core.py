import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stelayers.core import RngBank, affine, bernoulli_mask, glorot_uniform, make_rng


def test_affine_identity():
    np.testing.assert_array_equal(affine(np.eye(2), [3.0, -1.0], [0.0, 0.0]), [3.0, -1.0])


def test_affine_hand_computed():
    # [[1,2],[0,1]] @ [1,1] + [1,0] = [3+1, 1+0]
    np.testing.assert_array_equal(affine([[1.0, 2.0], [0.0, 1.0]], [1.0, 1.0], [1.0, 0.0]), [4.0, 1.0])


def test_affine_dimension_error_names_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(2,\)"):
        affine(np.ones((2, 3)), np.ones(2), np.zeros(2))


def test_affine_bias_mismatch():
    with pytest.raises(ValueError, match="dimension mismatch"):
        affine(np.ones((2, 3)), np.ones(3), np.zeros(4))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2**32 - 1))
def test_affine_is_linear(n, m, alpha, beta, seed):
    r = np.random.default_rng(seed)
    W, x, z = r.standard_normal((n, m)), r.standard_normal(m), r.standard_normal(m)
    zero = np.zeros(n)
    lhs = affine(W, alpha * x + beta * z, zero)
    rhs = alpha * affine(W, x, zero) + beta * affine(W, z, zero)
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)


def test_glorot_shape_and_small_bound():
    W = glorot_uniform(2, 4, make_rng(0))
    assert W.shape == (4, 2)
    assert np.all(np.abs(W) <= 1.0)


def test_glorot_mlp_bound():
    # sqrt(6 / (3072 + 2048)) evaluated independently
    bound = math.sqrt(6.0 / 5120.0)
    assert bound == pytest.approx(0.0342326598, abs=1e-9)
    W = glorot_uniform(3072, 2048, make_rng(1))
    assert np.abs(W).max() <= bound
    assert np.abs(W).max() > 0.99 * bound


def test_glorot_variance():
    bound = math.sqrt(6.0 / 6.0)
    samples = np.concatenate([glorot_uniform(3, 3, make_rng(7, i)).ravel() for i in range(111_112)])[:1_000_000]
    assert samples.size == 1_000_000
    assert np.abs(samples).max() <= bound
    # uniform on [-r, r] has variance r^2 / 3
    assert abs(samples.var() - bound**2 / 3) < 0.02 * bound**2 / 3


@pytest.mark.parametrize("fan", [(0, 3), (3, 0)])
def test_glorot_rejects_zero_fan(fan):
    with pytest.raises(ValueError):
        glorot_uniform(*fan, make_rng(0))


def test_bernoulli_p_one_is_all_ones():
    assert np.all(bernoulli_mask((7, 5), 1.0, make_rng(0)) == 1.0)


def test_bernoulli_mean():
    m = bernoulli_mask(100_000, 0.5, make_rng(3))
    assert set(np.unique(m)) <= {0.0, 1.0}
    assert abs(m.mean() - 0.5) < 3 * math.sqrt(0.25 / 100_000)


@pytest.mark.parametrize("p", [0.0, -0.1, 1.5])
def test_bernoulli_rejects_bad_p(p):
    with pytest.raises(ValueError):
        bernoulli_mask(3, p, make_rng(0))


def test_streams_are_deterministic_and_independent():
    a = bernoulli_mask((4, 4), 0.5, make_rng(9, 1, 2))
    b = bernoulli_mask((4, 4), 0.5, make_rng(9, 1, 2))
    np.testing.assert_array_equal(a, b)
    wa = glorot_uniform(5, 6, make_rng(9, 0, 0))
    wb = glorot_uniform(5, 6, make_rng(9, 0, 0))
    assert wa.tobytes() == wb.tobytes()
    assert not np.array_equal(make_rng(9, 1, 2).random(8), make_rng(9, 1, 3).random(8))


def test_rng_bank_state_round_trip():
    bank = RngBank(4)
    bank.get(1, 0).random(3)
    bank.get(2).random(5)
    saved = bank.state()
    expected = [bank.get(1, 0).random(4), bank.get(2).random(4)]
    other = RngBank(4)
    other.set_state(saved)
    np.testing.assert_array_equal(other.get(1, 0).random(4), expected[0])
    np.testing.assert_array_equal(other.get(2).random(4), expected[1])
