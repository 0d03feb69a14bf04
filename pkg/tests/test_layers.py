import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import naive_conv1d
from incepse import autodiff as ad
from incepse import layers as L
from incepse.autodiff import ShapeError, Tape, Tensor
from incepse.gradcheck import check_function


def _conv(x, w, b=None, stride=1):
    return L.conv1d(Tensor(x), L.ConvParams(Tensor(w), None if b is None else Tensor(b), stride)).values


def test_same_padding_law():
    assert L.same_padding(1000, 3, 2) == (500, 0, 1)
    assert L.same_padding(5, 3, 1) == (5, 1, 1)
    assert L.same_padding(10, 40, 1) == (10, 19, 20)


def test_conv_hand_example():
    x = np.array([[[1.0, 2, 3, 4, 5]]])
    w = np.array([[[1.0, 0, -1]]])
    np.testing.assert_array_equal(_conv(x, w), [[[-2, -2, -2, -2, 4]]])


@pytest.mark.parametrize("length", [1, 7, 64])
def test_conv_unit_kernel_is_identity(length, rng):
    x = rng.standard_normal((2, 1, length))
    np.testing.assert_array_equal(_conv(x, np.ones((1, 1, 1))), x)


def test_conv_stride_two_halves_length(rng):
    assert _conv(rng.standard_normal((1, 2, 1000)), rng.standard_normal((3, 2, 9)), stride=2).shape == (1, 3, 500)


def test_conv_channel_mismatch_raises(rng):
    with pytest.raises(ShapeError):
        _conv(rng.standard_normal((1, 2, 10)), rng.standard_normal((3, 4, 3)))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 4), st.integers(1, 30),
       st.sampled_from([1, 2, 3, 4, 9, 19, 39]), st.sampled_from([1, 2]), st.booleans(), st.integers(0, 2**32 - 1))
def test_conv_matches_naive_oracle(b, cin, cout, length, k, stride, bias, seed):
    r = np.random.default_rng(seed)
    x, w = r.standard_normal((b, cin, length)), r.standard_normal((cout, cin, k))
    bv = r.standard_normal(cout) if bias else None
    np.testing.assert_allclose(_conv(x, w, bv, stride), naive_conv1d(x, w, bv, stride), rtol=0, atol=1e-12)


def test_maxpool_examples():
    np.testing.assert_array_equal(L.maxpool1d(Tensor(np.array([[[1.0, 3, 2]]]))).values, [[[3, 3, 3]]])
    np.testing.assert_array_equal(L.maxpool1d(Tensor(np.full((1, 2, 6), 4.5))).values, np.full((1, 2, 6), 4.5))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40))
def test_maxpool_increasing_input(length):
    x = np.arange(length, dtype=float)[None, None] * 1.5 - 3
    out = L.maxpool1d(Tensor(x)).values[0, 0]
    expected = [x[0, 0, min(t + 1, length - 1)] for t in range(length)]
    np.testing.assert_array_equal(out, expected)


def test_maxpool_tie_gradient_goes_to_first_index():
    tape = Tape()
    x = tape.leaf(np.array([[[2.0, 2.0, 2.0]]]))
    g = tape.backward(ad.reduce("sum", L.maxpool1d(x)))[x]
    # windows: [pad,2,2] -> idx0, [2,2,2] -> idx0, [2,2,pad] -> idx1
    np.testing.assert_array_equal(g, [[[2.0, 1.0, 0.0]]])


def test_batchnorm_constant_input_gives_zero():
    s = L.BatchNormState.fresh(3)
    out = L.batchnorm1d(Tensor(np.full((4, 3, 5), 7.0)), s).values
    np.testing.assert_array_equal(out, 0.0)


def test_batchnorm_train_normalizes(rng):
    x = rng.normal(3.0, 2.5, (8, 4, 50))
    out = L.batchnorm1d(Tensor(x), L.BatchNormState.fresh(4)).values
    np.testing.assert_allclose(out.mean(axis=(0, 2)), 0.0, atol=1e-9)
    var = x.var(axis=(0, 2))
    np.testing.assert_allclose(out.var(axis=(0, 2)), var / (var + 1e-5), atol=1e-6)


def test_batchnorm_running_stats_update(rng):
    x = rng.normal(2.0, 3.0, (4, 2, 25))
    s = L.BatchNormState.fresh(2)
    L.batchnorm1d(Tensor(x), s)
    n = 4 * 25
    np.testing.assert_allclose(s.running_mean, 0.1 * x.mean(axis=(0, 2)), rtol=1e-12)
    np.testing.assert_allclose(s.running_var, 0.9 + 0.1 * x.var(axis=(0, 2)) * n / (n - 1), rtol=1e-12)


def test_batchnorm_eval_identity(rng):
    x = rng.standard_normal((2, 3, 10))
    s = L.BatchNormState.fresh(3)
    s.mode = "eval"
    np.testing.assert_allclose(L.batchnorm1d(Tensor(x), s).values, x / np.sqrt(1 + 1e-5), rtol=1e-15)


def test_linear_examples():
    x = Tensor(np.array([[1.0, 2.0]]))
    np.testing.assert_array_equal(L.linear(x, L.LinearParams(Tensor(np.eye(2)), Tensor(np.zeros(2)))).values, x.values)
    w = Tensor(np.array([[1.0, 1.0], [0.0, 1.0]]))
    np.testing.assert_array_equal(L.linear(x, L.LinearParams(w, Tensor(np.zeros(2)))).values, [[3, 2]])


def test_linear_gradient(rng):
    r = check_function("linear", lambda x, w, b: L.linear(x, L.LinearParams(w, b)),
                       {"x": rng.standard_normal((3, 4)), "w": rng.standard_normal((2, 4)), "b": rng.standard_normal(2)},
                       rng)
    assert r.passed(1e-4)


def test_global_avg_pool_values_and_gradient():
    np.testing.assert_array_equal(L.global_avg_pool(Tensor(np.array([[[1.0, 2.0, 3.0]]]))).values, [[2.0]])
    np.testing.assert_array_equal(L.global_avg_pool(Tensor(np.full((2, 2, 9), -1.5))).values, -1.5)
    tape = Tape()
    x = tape.leaf(np.zeros((1, 1, 4)))
    np.testing.assert_array_equal(tape.backward(ad.reduce("sum", L.global_avg_pool(x)))[x], 0.25)


def test_dropout_identities(rng):
    x = Tensor(rng.standard_normal((2, 3, 4)))
    for mode in ("train", "eval"):
        assert np.array_equal(L.dropout(x, 0.0, mode, rng).values, x.values)
    assert np.array_equal(L.dropout(x, 0.5, "eval").values, x.values)


def test_dropout_preserves_expectation():
    x = Tensor(np.ones((1, 1, 100_000)))
    out = L.dropout(x, 0.5, "train", np.random.default_rng(0)).values
    assert abs(out.mean() - 1.0) <= 0.02
    assert set(np.unique(out)) <= {0.0, 2.0}


def test_dropout_rejects_p_one():
    with pytest.raises(ValueError):
        L.dropout(Tensor(np.ones(3)), 1.0, "train", np.random.default_rng(0))


def test_channel_scale(rng):
    x = rng.standard_normal((2, 3, 5))
    w = rng.random((2, 3))
    np.testing.assert_array_equal(L.channel_scale(Tensor(x), Tensor(w)).values, x * w[:, :, None])


def test_bce_closed_forms():
    assert L.bce_with_logits(Tensor([[0.0]]), np.array([[1.0]])).item() == pytest.approx(np.log(2), abs=1e-12)
    v = L.bce_with_logits(Tensor([[100.0]]), np.array([[1.0]])).item()
    assert 0.0 <= v < 1e-40
    assert np.isfinite(L.bce_with_logits(Tensor([[-1000.0, 1000.0]]), np.array([[1.0, 0.0]])).item())


def test_bce_gradient_is_sigmoid_minus_target(rng):
    z = rng.uniform(-4, 4, (3, 5))
    y = (rng.random((3, 5)) < 0.5).astype(float)
    tape = Tape()
    zt = tape.leaf(z)
    g = tape.backward(L.bce_with_logits(zt, y))[zt]
    np.testing.assert_allclose(g, (1 / (1 + np.exp(-z)) - y) / z.size, rtol=1e-12)
    assert check_function("bce", lambda z: L.bce_with_logits(z, y), {"z": z}, rng).passed(1e-4)


def test_bce_rejects_non_binary_targets():
    with pytest.raises(ValueError):
        L.bce_with_logits(Tensor([[0.0]]), np.array([[0.5]]))
