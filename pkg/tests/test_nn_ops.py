"""Layer forwards against naive scalar-loop oracles; dropout statistics."""

import numpy as np
import pytest

from lcnet.nn import (
    LayerSpec,
    conv1d_forward,
    count_parameters,
    dense_forward,
    dropout_forward,
    embedding_lookup,
    lcn1d_forward,
    output_positions,
)
from lcnet.nn.activations import activation


def dense_oracle(x, w, b, act):
    f, _ = activation(act)
    out = np.empty(w.shape[0])
    for j in range(w.shape[0]):
        acc = b[j]
        for l in range(w.shape[1]):
            acc += w[j, l] * x[l]
        out[j] = f(np.array(acc))
    return out


def lcn_oracle(x, filters, biases, m, s, act):
    f, _ = activation(act)
    p = (len(x) - m) // s + 1
    out = np.empty(p)
    for k in range(p):
        acc = biases[k]
        for l in range(m):
            acc += filters[k, l] * x[k * s + l]
        out[k] = f(np.array(acc))
    return out


def test_dense_identity():
    x = np.array([1.0, -2.0, 3.0])
    out = dense_forward(x, np.eye(3), np.zeros(3), "linear")
    np.testing.assert_array_equal(out, x)


def test_dense_hand_arithmetic():
    out = dense_forward(
        np.array([1.0, 2.0]), np.array([[1.0, 1.0]]), np.array([0.5]), "linear"
    )
    np.testing.assert_allclose(out, [3.5])


def test_dense_matches_loop_oracle():
    rng = np.random.default_rng(51)
    for act in ("linear", "tanh", "relu"):
        for _ in range(10):
            x = rng.standard_normal(7)
            w = rng.standard_normal((4, 7))
            b = rng.standard_normal(4)
            np.testing.assert_allclose(
                dense_forward(x, w, b, act), dense_oracle(x, w, b, act), atol=1e-12
            )


def test_dense_shape_mismatch():
    with pytest.raises(ValueError):
        dense_forward(np.ones(3), np.ones((2, 4)), np.zeros(2))


def test_lcn_averaging_kernel():
    x = np.arange(8.0)
    filters = np.full((2, 4), 0.25)
    out = lcn1d_forward(x, filters, np.zeros(2), m=4, s=4)
    np.testing.assert_allclose(out, [x[:4].mean(), x[4:].mean()])


def test_lcn_position_count_for_age_grid():
    # 100 ages with kernel 4, stride 4: one feature per 4-age group.
    assert output_positions(100, 4, 4) == 25
    x = np.zeros(100)
    out = lcn1d_forward(x, np.zeros((25, 4)), np.zeros(25), 4, 4)
    assert out.shape == (25,)


def test_lcn_matches_loop_oracle():
    rng = np.random.default_rng(53)
    for _ in range(10):
        x = rng.standard_normal(12)
        filters = rng.standard_normal((5, 4))
        biases = rng.standard_normal(5)
        np.testing.assert_allclose(
            lcn1d_forward(x, filters, biases, 4, 2, "tanh"),
            lcn_oracle(x, filters, biases, 4, 2, "tanh"),
            atol=1e-12,
        )


def test_lcn_bad_stride_rejected():
    with pytest.raises(ValueError):
        lcn1d_forward(np.zeros(10), np.zeros((3, 4)), np.zeros(3), 4, 4)


def test_conv_equals_lcn_with_replicated_filter():
    rng = np.random.default_rng(55)
    x = rng.standard_normal(20)
    filt = rng.standard_normal(4)
    bias = 0.3
    conv = conv1d_forward(x, filt, bias, 4, 4)
    lcn = lcn1d_forward(x, np.tile(filt, (5, 1)), np.full(5, bias), 4, 4)
    np.testing.assert_array_equal(conv, lcn)


def test_conv_selector_kernel():
    x = np.arange(100.0)
    out = conv1d_forward(x, np.array([1.0, 0.0, 0.0, 0.0]), 0.0, 4, 4)
    np.testing.assert_array_equal(out, x[::4])


def test_conv_matches_loop_oracle():
    rng = np.random.default_rng(57)
    for _ in range(10):
        x = rng.standard_normal(10)
        filt = rng.standard_normal(3)
        bias = rng.standard_normal()
        lcn_equiv = lcn_oracle(
            x, np.tile(filt, (8, 1)), np.full(8, bias), 3, 1, "linear"
        )
        np.testing.assert_allclose(
            conv1d_forward(x, filt, bias, 3, 1), lcn_equiv, atol=1e-12
        )


def test_embedding_lookup_rows():
    table = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(embedding_lookup(table, 1), [3.0, 4.0])
    with pytest.raises(IndexError):
        embedding_lookup(table, 2)
    with pytest.raises(IndexError):
        embedding_lookup(table, -1)


def test_dropout_rate_zero_and_eval_identity():
    rng = np.random.default_rng(59)
    x = rng.standard_normal(50)
    out, mask = dropout_forward(x, 0.0, "train", rng)
    np.testing.assert_array_equal(out, x)
    assert mask.all()
    out, mask = dropout_forward(x, 0.9, "eval")
    np.testing.assert_array_equal(out, x)
    assert mask.all()


def test_dropout_statistics():
    rng = np.random.default_rng(61)
    x = np.ones(100_000) + rng.random(100_000)
    out, mask = dropout_forward(x, 0.5, "train", np.random.default_rng(7))
    zero_fraction = 1.0 - mask.mean()
    assert abs(zero_fraction - 0.5) <= 0.01
    assert abs(out.mean() - x.mean()) <= 0.01 * abs(x.mean())


def test_dropout_mean_preserved_three_sigma():
    # Train-mode expectation preserves the mean: check within 3 standard
    # errors of the inverted-dropout estimator.
    n, rate = 200_000, 0.3
    x = np.ones(n)
    out, _ = dropout_forward(x, rate, "train", np.random.default_rng(17))
    se = np.sqrt(rate / (1 - rate) / n)
    assert abs(out.mean() - 1.0) <= 3 * se


def test_parameter_counts_closed_forms():
    assert count_parameters([LayerSpec("dense", "d", units=25, in_dim=100)]) == 2525
    assert count_parameters(
        [LayerSpec("lcn1d", "l", in_dim=100, kernel=4, stride=4, filters=1)]
    ) == 125
    assert count_parameters(
        [LayerSpec("conv1d", "c", in_dim=100, kernel=4, stride=4, filters=1)]
    ) == 5
    assert count_parameters([LayerSpec("embedding", "e", vocab=40, dim=5)]) == 200
    assert count_parameters([LayerSpec("dropout", "x", rate=0.5)]) == 0
    assert count_parameters([LayerSpec("concat", "cc")]) == 0
    assert count_parameters([LayerSpec("scalar-multiply-add", "s")]) == 0


def test_layerspec_validation():
    with pytest.raises(ValueError):
        LayerSpec("dense", "bad", activation="sigmoid")
    with pytest.raises(ValueError):
        LayerSpec("lcn1d", "bad", in_dim=10, kernel=4, stride=4)
    with pytest.raises(ValueError):
        LayerSpec("dropout", "bad", rate=1.0)
    with pytest.raises(ValueError):
        LayerSpec("mystery", "bad")
