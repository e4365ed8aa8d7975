import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from streamnar.errors import DimensionMismatch, EvenKernel, FullyMaskedRow
from streamnar.numerics import (
    AttentionWeights,
    FeedForwardWeights,
    conv1d,
    depthwise_conv1d,
    feed_forward,
    layer_norm,
    multi_head_attention,
    sinusoidal_positions,
    softmax_rows,
)


def random_attention_weights(rng, dim):
    s = 1 / math.sqrt(dim)
    mats = [rng.uniform(-s, s, (dim, dim)).astype(np.float32) for _ in range(4)]
    vecs = [rng.uniform(-0.1, 0.1, dim).astype(np.float32) for _ in range(4)]
    return AttentionWeights(mats[0], vecs[0], mats[1], vecs[1], mats[2], vecs[2], mats[3], vecs[3])


def as_lists(w):
    return {n: getattr(w, n).astype(float).tolist() for n in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")}


# ---------------------------------------------------------------- softmax


def test_softmax_symmetric():
    np.testing.assert_allclose(softmax_rows([[0.0, 0.0]]), [[0.5, 0.5]])


def test_softmax_analytic():
    np.testing.assert_allclose(softmax_rows([[math.log(2), 0.0]]), [[2 / 3, 1 / 3]], rtol=1e-6)


def test_softmax_single_allowed_key():
    out = softmax_rows([[5.0, 9.0]], mask=[[True, False]])
    assert out.tolist() == [[1.0, 0.0]]


def test_softmax_fully_masked_row_errors():
    with pytest.raises(FullyMaskedRow):
        softmax_rows([[1.0, 2.0], [3.0, 4.0]], mask=[[True, False], [False, False]])


def test_softmax_mask_shape_checked():
    with pytest.raises(DimensionMismatch):
        softmax_rows([[1.0, 2.0]], mask=[[True]])


def test_softmax_large_values_stay_finite():
    out = softmax_rows([[1e30, -1e30, 0.0]])
    assert np.isfinite(out).all()
    np.testing.assert_allclose(out, [[1.0, 0.0, 0.0]])


finite = st.floats(-50, 50, allow_nan=False, width=32)


@st.composite
def matrix_and_mask(draw):
    rows = draw(st.integers(1, 6))
    cols = draw(st.integers(1, 6))
    m = draw(arrays(np.float32, (rows, cols), elements=finite))
    mask = draw(arrays(np.bool_, (rows, cols)))
    mask[np.arange(rows), draw(st.lists(st.integers(0, cols - 1), min_size=rows, max_size=rows))] = True
    return m, mask


@given(matrix_and_mask())
@settings(max_examples=200, deadline=None)
def test_softmax_rows_sum_to_one_and_masked_are_zero(case):
    m, mask = case
    out = softmax_rows(m, mask)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-5)
    assert (out[~mask] == 0).all()


@given(matrix_and_mask(), st.floats(-1e3, 1e3, allow_nan=False))
@settings(max_examples=100, deadline=None)
def test_softmax_ignores_values_under_the_mask(case, junk):
    m, mask = case
    perturbed = np.where(mask, m, np.float32(junk))
    np.testing.assert_allclose(softmax_rows(perturbed, mask), softmax_rows(m, mask), atol=1e-6)


# ---------------------------------------------------------------- attention


def test_attention_self_only_mask_returns_v():
    rng = np.random.default_rng(0)
    q, k, v = (rng.standard_normal((5, 4)).astype(np.float32) for _ in range(3))
    out = multi_head_attention(q, k, v, np.eye(5, dtype=bool), 1, AttentionWeights.identity(4))
    np.testing.assert_allclose(out, v, atol=1e-6)


def test_attention_identical_rows_returns_common_v():
    rng = np.random.default_rng(1)
    q = rng.standard_normal((3, 4)).astype(np.float32)
    k = np.tile(rng.standard_normal(4).astype(np.float32), (6, 1))
    v = np.tile(rng.standard_normal(4).astype(np.float32), (6, 1))
    out = multi_head_attention(q, k, v, np.ones((3, 6), bool), 1, AttentionWeights.identity(4))
    np.testing.assert_allclose(out, v[:3], atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("masked", [False, True])
def test_attention_matches_scalar_oracle(seed, masked):
    rng = np.random.default_rng(seed)
    q, k, v = (rng.standard_normal((4, 8)).astype(np.float32) for _ in range(3))
    w = random_attention_weights(rng, 8)
    mask = None
    if masked:
        mask = rng.random((4, 4)) < 0.5
        mask[np.arange(4), rng.integers(0, 4, 4)] = True
    ref = oracles.attention(q.tolist(), k.tolist(), v.tolist(), None if mask is None else mask.tolist(), 2, as_lists(w))
    np.testing.assert_allclose(multi_head_attention(q, k, v, mask, 2, w), ref, atol=1e-5)


def test_attention_shape_errors():
    w = AttentionWeights.identity(4)
    x = np.zeros((3, 4), np.float32)
    with pytest.raises(DimensionMismatch):
        multi_head_attention(x, x, x, None, 3, w)
    with pytest.raises(DimensionMismatch):
        multi_head_attention(x, x, x[:2], None, 1, w)
    with pytest.raises(DimensionMismatch):
        multi_head_attention(x, x, x, np.ones((3, 2), bool), 1, w)


def test_attention_fully_masked_propagates():
    x = np.zeros((2, 4), np.float32)
    with pytest.raises(FullyMaskedRow):
        multi_head_attention(x, x, x, np.array([[True, True], [False, False]]), 1, AttentionWeights.identity(4))


# ---------------------------------------------------------------- layer norm


def test_layer_norm_constant_row_collapses_to_bias():
    out = layer_norm([[3.0, 3.0, 3.0]], np.ones(3), np.zeros(3))
    assert out.tolist() == [[0.0, 0.0, 0.0]]


def test_layer_norm_constant_row_zero_epsilon():
    out = layer_norm([[2.0, 2.0]], np.ones(2), np.array([0.5, -1.0]), epsilon=0.0)
    assert out.tolist() == [[0.5, -1.0]]


def test_layer_norm_already_normalized():
    np.testing.assert_allclose(layer_norm([[1.0, -1.0]], np.ones(2), np.zeros(2), 0.0), [[1.0, -1.0]])


def test_layer_norm_affine():
    np.testing.assert_allclose(layer_norm([[3.0, 5.0]], np.full(2, 2.0), np.ones(2), 0.0), [[-1.0, 3.0]])


def test_layer_norm_matches_scalar_oracle():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 6)).astype(np.float32)
    g = rng.standard_normal(6).astype(np.float32)
    b = rng.standard_normal(6).astype(np.float32)
    ref = oracles.layer_norm(x.tolist(), g.tolist(), b.tolist())
    np.testing.assert_allclose(layer_norm(x, g, b), ref, atol=1e-5)


def test_layer_norm_checks_vectors():
    with pytest.raises(DimensionMismatch):
        layer_norm([[1.0, 2.0]], np.ones(3), np.zeros(2))


# ---------------------------------------------------------------- depthwise conv


def test_depthwise_identity_kernel():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((6, 3)).astype(np.float32)
    k = np.zeros((3, 3), np.float32)
    k[1] = 1
    np.testing.assert_array_equal(depthwise_conv1d(x, k), x)


def test_depthwise_moving_sum():
    out = depthwise_conv1d([[1.0], [2.0], [3.0]], np.ones((3, 1)))
    assert out[:, 0].tolist() == [3.0, 6.0, 5.0]


def test_depthwise_left_context_carry_in():
    out = depthwise_conv1d([[1.0], [2.0]], [[1.0], [0.0], [0.0]], left_pad=[[7.0]], right_zero_pad=1)
    assert out[:, 0].tolist() == [7.0, 1.0]


def test_depthwise_even_kernel_rejected():
    with pytest.raises(EvenKernel):
        depthwise_conv1d(np.zeros((4, 2)), np.zeros((4, 2)))


def test_depthwise_padding_must_match_kernel():
    with pytest.raises(DimensionMismatch):
        depthwise_conv1d(np.zeros((4, 1)), np.zeros((3, 1)), left_pad=np.zeros((2, 1)))
    with pytest.raises(DimensionMismatch):
        depthwise_conv1d(np.zeros((4, 1)), np.zeros((3, 1)), right_zero_pad=0)


@given(
    arrays(np.float32, (5, 2), elements=st.floats(-10, 10, width=32)),
    arrays(np.float32, (5, 2), elements=st.floats(-10, 10, width=32)),
    arrays(np.float32, (3, 2), elements=st.floats(-2, 2, width=32)),
    st.floats(-3, 3),
)
@settings(max_examples=100, deadline=None)
def test_depthwise_is_linear(x, y, k, a):
    a = np.float32(a)
    lhs = depthwise_conv1d(a * x + y, k)
    rhs = a * depthwise_conv1d(x, k) + depthwise_conv1d(y, k)
    np.testing.assert_allclose(lhs, rhs, atol=1e-3)


def test_depthwise_does_not_mutate_inputs():
    x = np.arange(8, dtype=np.float32).reshape(4, 2)
    k = np.ones((3, 2), np.float32)
    before = x.copy(), k.copy()
    first = depthwise_conv1d(x, k)
    np.testing.assert_array_equal(first, depthwise_conv1d(x, k))
    np.testing.assert_array_equal(x, before[0])
    np.testing.assert_array_equal(k, before[1])


# ---------------------------------------------------------------- feed-forward


def test_ffn_zero_in_zero_out():
    w = FeedForwardWeights(np.ones((4, 6), np.float32), np.zeros(6, np.float32),
                           np.ones((6, 4), np.float32), np.zeros(4, np.float32))
    assert not feed_forward(np.zeros((3, 4)), w).any()


def test_ffn_constant_propagation():
    b = np.array([1.0, -2.0, 3.0], np.float32)
    w = FeedForwardWeights(np.eye(3, dtype=np.float32), np.zeros(3, np.float32), np.zeros((3, 3), np.float32), b)
    rng = np.random.default_rng(5)
    out = feed_forward(rng.standard_normal((4, 3)), w)
    np.testing.assert_array_equal(out, np.tile(b, (4, 1)))


def test_ffn_matches_scalar_oracle():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((3, 4)).astype(np.float32)
    w1, w2 = rng.standard_normal((4, 7)).astype(np.float32), rng.standard_normal((7, 4)).astype(np.float32)
    b1, b2 = rng.standard_normal(7).astype(np.float32), rng.standard_normal(4).astype(np.float32)
    ref = oracles.feed_forward(*(a.astype(float).tolist() for a in (x, w1, b1, w2, b2)))
    np.testing.assert_allclose(feed_forward(x, FeedForwardWeights(w1, b1, w2, b2)), ref, atol=1e-5)


# ---------------------------------------------------------------- misc


def test_conv1d_stride_two_matches_loop():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((8, 3)).astype(np.float32)
    w = rng.standard_normal((3, 3, 2)).astype(np.float32)
    b = rng.standard_normal(2).astype(np.float32)
    out = conv1d(x, w, b, stride=2, pad=1)
    padded = np.concatenate([np.zeros((1, 3)), x, np.zeros((1, 3))])
    ref = [sum(padded[2 * t + k] @ w[k] for k in range(3)) + b for t in range(4)]
    np.testing.assert_allclose(out, ref, atol=1e-5)


def test_sinusoidal_positions_match_scalar_formula():
    np.testing.assert_allclose(sinusoidal_positions(5, 4, 6), oracles.positions(5, 4, 6), atol=1e-6)


def test_sinusoidal_offset_is_a_slice():
    np.testing.assert_allclose(sinusoidal_positions(0, 10, 8)[6:], sinusoidal_positions(6, 4, 8), atol=1e-6)
