import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from incepse import autodiff as ad
from incepse.autodiff import ShapeError, Tape, TapeError, Tensor, build_tensor
from incepse.gradcheck import op_suite


def test_build_tensor_row_major():
    t = build_tensor([2, 2], [1, 2, 3, 4])
    assert t.shape == (2, 2)
    np.testing.assert_array_equal(t.values, [[1, 2], [3, 4]])


def test_build_tensor_scalar_like_leaf():
    t = build_tensor([1], [0], requires_grad=True, tape=Tape())
    assert t.shape == (1,) and t.values[0] == 0


def test_build_tensor_length_mismatch():
    with pytest.raises(ValueError, match="length mismatch"):
        build_tensor([2], [1, 2, 3])


def test_tensor_values_are_read_only():
    t = Tensor(np.ones(3))
    with pytest.raises(ValueError):
        t.values[0] = 2.0


def test_rank_above_three_rejected():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((1, 1, 1, 1)))


def test_elementwise_values():
    np.testing.assert_array_equal(ad.relu(Tensor([-1.0, 0.0, 2.0])).values, [0, 0, 2])
    assert ad.sigmoid(Tensor([0.0])).values[0] == 0.5
    np.testing.assert_array_equal(ad.add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).values, [4, 6])


def test_elementwise_shape_mismatch():
    with pytest.raises(ShapeError):
        ad.add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))


def test_matmul_small_cases():
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(ad.matmul(Tensor(np.eye(2)), m).values, m.values)
    np.testing.assert_array_equal(ad.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).values, [[11]])


def test_matmul_against_triple_loop(rng):
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    naive = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                naive[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose(ad.matmul(Tensor(a), Tensor(b)).values, naive, rtol=0, atol=1e-12)


def test_reductions():
    assert ad.reduce("mean", Tensor([1.0, 2.0, 3.0]), axes=0).values.tolist() == [2.0]
    assert ad.reduce("sum", Tensor([[1.0, 2.0], [3.0, 4.0]]), axes=1).values.tolist() == [3.0, 7.0]
    assert ad.reduce("mean", Tensor(np.full(1000, 5.0))).values.tolist() == [5.0]


def test_concat_shapes_and_order(rng):
    parts = [Tensor(np.array([[[1.0]]])), Tensor(np.array([[[2.0]]]))]
    assert ad.concat(parts, axis=1).shape == (1, 2, 1)
    four = [Tensor(rng.standard_normal((2, 32, 7))) for _ in range(4)]
    assert ad.concat(four, axis=1).shape == (2, 128, 7)
    a, b = four[0], four[1]
    assert not np.array_equal(ad.concat([a, b]).values, ad.concat([b, a]).values)


def test_product_rule():
    tape = Tape()
    x, y = tape.tensor([1], [2.0]), tape.tensor([1], [3.0])
    g = tape.backward(ad.mul(x, y))
    assert g[x][0] == 3.0 and g[y][0] == 2.0


def test_relu_gradient_at_negative():
    tape = Tape()
    x = tape.tensor([1], [-1.0])
    assert tape.backward(ad.relu(x))[x][0] == 0.0


def test_fan_out_accumulates():
    tape = Tape()
    x = tape.tensor([1], [3.0])
    loss = ad.add(ad.mul(x, x), x)  # x^2 + x
    assert tape.backward(loss)[x][0] == 7.0


def test_unreachable_leaf_gets_zero():
    tape = Tape()
    x, unused = tape.leaf(np.ones(2)), tape.leaf(np.ones(3))
    g = tape.backward(ad.reduce("sum", x))
    np.testing.assert_array_equal(g[unused], np.zeros(3))


def test_tape_closes_after_backward():
    tape = Tape()
    x = tape.leaf(np.ones(2))
    tape.backward(ad.reduce("sum", x))
    with pytest.raises(TapeError):
        tape.backward(ad.reduce("sum", x))


def test_backward_requires_scalar():
    tape = Tape()
    x = tape.leaf(np.ones(2))
    with pytest.raises(TapeError, match="scalar"):
        tape.backward(ad.relu(x))


def test_every_primitive_passes_finite_differences():
    for result in op_suite(0):
        assert result.passed(1e-4), (result.name, result.max_rel_error)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 5)),
              elements=st.floats(-10, 10, allow_nan=False)))
def test_sum_gradient_is_ones(a):
    tape = Tape()
    x = tape.leaf(a)
    np.testing.assert_array_equal(tape.backward(ad.reduce("sum", x))[x], np.ones_like(a))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-50, 50, allow_nan=False)))
def test_sigmoid_in_unit_interval_and_symmetric(a):
    s = ad.sigmoid(Tensor(a)).values
    assert np.all((s >= 0) & (s <= 1))
    np.testing.assert_allclose(s + ad.sigmoid(Tensor(-a)).values, 1.0, atol=1e-12)
