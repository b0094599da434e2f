import numpy as np
import pytest

from thermobyol.errors import (
    DegenerateVector,
    InvalidAxis,
    NotScalar,
    ShapeMismatch,
)
from thermobyol.tensor import (
    Parameter,
    Tensor,
    backward,
    elementwise,
    finite_difference_grad,
    l2_normalize,
    reduce,
    tensor_new,
)


def test_tensor_new_zero_fill():
    t = tensor_new([2, 2], fill=0)
    assert t.shape == (2, 2)
    assert np.array_equal(t.data, np.zeros((2, 2)))


def test_tensor_new_from_data():
    t = tensor_new([3], data=[1, 2, 3])
    assert np.array_equal(t.data, [1.0, 2.0, 3.0])


def test_tensor_new_length_mismatch():
    with pytest.raises(ShapeMismatch):
        tensor_new([2], data=[1, 2, 3])


def test_tensor_new_rejects_nonpositive_shape():
    with pytest.raises(ShapeMismatch):
        tensor_new([2, 0])


def test_matmul_identity():
    a = tensor_new([2, 2], data=[1, 0, 0, 1])
    b = tensor_new([2, 2], data=[1, 2, 3, 4])
    assert np.allclose((a @ b).data, [[1, 2], [3, 4]])


def test_matmul_hand_checked():
    a = tensor_new([1, 2], data=[1, 2])
    b = tensor_new([2, 1], data=[3, 4])
    assert np.allclose((a @ b).data, [[11]])


def test_matmul_inner_dim_error():
    with pytest.raises(ShapeMismatch):
        tensor_new([2, 3]) @ tensor_new([2, 3])


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    a0 = rng.normal(size=(3, 4))
    b0 = rng.normal(size=(4, 2))

    a = Parameter(a0, "a", dtype=np.float64)
    b = Tensor(b0, dtype=np.float64)
    grads = backward((a @ b).sum())

    fd = finite_difference_grad(lambda x: (x @ b0).sum(), a0, eps=1e-3)
    np.testing.assert_allclose(grads[a], fd, rtol=1e-4)


def test_elementwise_trivials():
    assert np.array_equal(
        elementwise("add", tensor_new([2], data=[1, 2]), tensor_new([2], data=[3, 4])).data,
        [4, 6],
    )
    assert np.array_equal(
        elementwise("mul", tensor_new([2], data=[1, 2]), tensor_new([2], data=[0, 0])).data,
        [0, 0],
    )
    assert np.array_equal(
        elementwise("scalar_mul", 2.0, tensor_new([3], data=[1, 2, 3])).data, [2, 4, 6]
    )


def test_elementwise_shape_error():
    with pytest.raises(ShapeMismatch):
        tensor_new([2]) + tensor_new([3])


def test_reduce_mean_all():
    assert reduce("mean", tensor_new([4], data=[1, 2, 3, 4])).data == pytest.approx(2.5)


def test_reduce_sum_axis():
    t = tensor_new([2, 2], data=[1, 2, 3, 4])
    assert np.array_equal(reduce("sum", t, axes=0).data, [4, 6])


def test_reduce_invalid_axis():
    with pytest.raises(InvalidAxis):
        reduce("sum", tensor_new([2, 2]), axes=5)


def test_reduce_mean_gradient_is_uniform():
    p = Parameter(np.arange(6.0).reshape(2, 3), "p", dtype=np.float64)
    grads = backward(p.mean())
    np.testing.assert_allclose(grads[p], np.full((2, 3), 1.0 / 6.0))


def test_l2_normalize_345():
    out = l2_normalize(tensor_new([2], data=[3, 4]))
    np.testing.assert_allclose(out.data, [0.6, 0.8])
    assert abs(np.linalg.norm(out.data) - 1.0) < 1e-6


def test_l2_normalize_axis_aligned():
    np.testing.assert_allclose(l2_normalize(tensor_new([3], data=[5, 0, 0])).data, [1, 0, 0])


def test_l2_normalize_degenerate():
    with pytest.raises(DegenerateVector):
        l2_normalize(tensor_new([2], fill=0.0))


def test_l2_normalize_gradient():
    rng = np.random.default_rng(3)
    x0 = rng.normal(size=5)
    w = rng.normal(size=5)
    p = Parameter(x0, "x", dtype=np.float64)
    loss = (l2_normalize(p) * Tensor(w, dtype=np.float64)).sum()
    grads = backward(loss)
    fd = finite_difference_grad(lambda x: np.dot(x / np.linalg.norm(x), w), x0)
    np.testing.assert_allclose(grads[p], fd, rtol=1e-3, atol=1e-8)


def test_backward_sum_gives_ones():
    p = Parameter(np.zeros((2, 3)), "p")
    grads = backward(p.sum())
    np.testing.assert_array_equal(grads[p], np.ones((2, 3)))


def test_backward_skips_non_trainable():
    q = Parameter(np.ones(4), "q", trainable=False)
    grads = backward(q.sum())
    assert grads == {}


def test_backward_requires_scalar():
    p = Parameter(np.ones(3), "p")
    with pytest.raises(NotScalar):
        backward(p + p)


def test_backward_accumulates_shared_input():
    p = Parameter(np.array([2.0, 3.0]), "p", dtype=np.float64)
    loss = (p * p).sum()  # d/dp = 2p
    grads = backward(loss)
    np.testing.assert_allclose(grads[p], [4.0, 6.0])


def test_finite_difference_oracle_on_known_functions():
    x = np.array([1.0, 2.0])
    np.testing.assert_allclose(
        finite_difference_grad(lambda v: (v**2).sum(), x, eps=1e-4), [2.0, 4.0], rtol=1e-6
    )
    np.testing.assert_allclose(
        finite_difference_grad(lambda v: 7.0, x, eps=1e-4), [0.0, 0.0], atol=1e-12
    )
    np.testing.assert_allclose(
        finite_difference_grad(lambda v: v.mean(), x, eps=1e-4), [0.5, 0.5], rtol=1e-8
    )


def test_ops_are_deterministic():
    rng = np.random.default_rng(11)
    a = Tensor(rng.normal(size=(4, 4)))
    b = Tensor(rng.normal(size=(4, 4)))
    first = ((a @ b) + a * b).data
    second = ((a @ b) + a * b).data
    assert np.array_equal(first, second)
