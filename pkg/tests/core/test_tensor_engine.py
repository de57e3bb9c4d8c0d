# tests/core/test_tensor_engine.py
import numpy as np
import pytest

from src.core.gradcheck import grad_check
from src.core.tensor_engine import (
    ParamStore,
    Tensor,
    concat,
    dense,
    dropout,
    gather_points,
    glorot_uniform,
    l2_normalize,
    max_pool_points,
    mean,
    quat_to_rotmat,
    relu,
    rotate_points,
    sqrt,
    take,
    tsum,
)
from src.exceptions import EmptyAxis, NoGradient, ShapeMismatch


def test_integer_data_becomes_float32():
    assert Tensor(np.arange(3)).dtype == np.float32


def test_backward_needs_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeMismatch):
        (x * 2.0).backward()


def test_sum_of_products_gradient():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    y = Tensor(np.array([4.0, 5.0, 6.0]), requires_grad=True)
    tsum(x * y + x).backward()
    np.testing.assert_array_equal(x.grad, [5.0, 6.0, 7.0])
    np.testing.assert_array_equal(y.grad, [1.0, 2.0, 3.0])


def test_broadcast_gradient_is_reduced():
    x = Tensor(np.ones((4, 3)), requires_grad=True)
    b = Tensor(np.zeros(3), requires_grad=True)
    tsum(x + b).backward()
    np.testing.assert_array_equal(b.grad, [4.0, 4.0, 4.0])


def test_sqrt_gradient_is_zero_at_zero():
    x = Tensor(np.array([0.0, 4.0]), requires_grad=True)
    tsum(sqrt(x)).backward()
    np.testing.assert_allclose(x.grad, [0.0, 0.25])


def test_mean_over_empty_axis():
    with pytest.raises(EmptyAxis):
        mean(Tensor(np.empty((0, 3))), axis=0)


def test_take_accumulates_repeated_rows():
    x = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    tsum(take(x, np.array([0, 0, 2]))).backward()
    np.testing.assert_array_equal(x.grad, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])


def test_gather_points_selects_per_batch():
    x = Tensor(np.arange(12.0).reshape(2, 3, 2))
    out = gather_points(x, np.array([[2, 0], [1, 1]]))
    np.testing.assert_array_equal(out.data, [[[4, 5], [0, 1]], [[8, 9], [8, 9]]])


def test_concat_splits_gradient():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.ones((2, 1)), requires_grad=True)
    tsum(concat([a, b], axis=-1) * np.array([1.0, 2.0, 3.0])).backward()
    np.testing.assert_array_equal(a.grad, [[1.0, 2.0], [1.0, 2.0]])
    np.testing.assert_array_equal(b.grad, [[3.0], [3.0]])


def test_dense_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        dense(Tensor(np.ones((2, 4))), Tensor(np.ones((3, 5))), Tensor(np.zeros(5)))


def test_max_pool_ties_go_to_first_point():
    x = Tensor(np.array([[1.0, 2.0], [1.0, 0.0]]), requires_grad=True)
    tsum(max_pool_points(x)).backward()
    np.testing.assert_array_equal(x.grad, [[1.0, 1.0], [0.0, 0.0]])


def test_l2_normalize_gives_unit_rows(rng):
    y = l2_normalize(Tensor(rng.normal(size=(5, 7))))
    np.testing.assert_allclose(np.linalg.norm(y.data, axis=-1), 1.0, rtol=1e-6)


def test_dropout_is_identity_in_inference():
    x = Tensor(np.ones((3, 4)))
    assert dropout(x, 0.5, None, training=False) is x


def test_dropout_errors():
    x = Tensor(np.ones((3, 4)))
    with pytest.raises(ValueError):
        dropout(x, 1.0, np.random.default_rng(0), training=True)
    with pytest.raises(ValueError):
        dropout(x, 0.3, None, training=True)


def test_dropout_keeps_expectation():
    out = dropout(Tensor(np.ones(200_000)), 0.3, np.random.default_rng(1), training=True)
    assert out.data.mean() == pytest.approx(1.0, abs=0.01)


def test_quaternion_matrix_is_a_rotation(rng):
    q = rng.normal(size=(4, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    R = quat_to_rotmat(Tensor(q)).data
    for Ri in R:
        np.testing.assert_allclose(Ri @ Ri.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(Ri) == pytest.approx(1.0)


def test_rotate_points_applies_transpose(rng):
    pts = rng.normal(size=(2, 5, 3))
    R = np.stack([np.eye(3), np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])])
    out = rotate_points(Tensor(pts), Tensor(R)).data
    np.testing.assert_allclose(out[1], pts[1] @ R[1].T)


@pytest.mark.parametrize("build", ["dense_relu", "quat_rotate", "l2_pool"])
def test_finite_difference_agreement(build):
    gen = np.random.default_rng(4)
    store = ParamStore()
    if build == "dense_relu":
        x = store.add("x", gen.normal(size=(3, 4)))
        W = store.add("W", gen.normal(size=(4, 2)))
        b = store.add("b", gen.normal(size=2))
        f = lambda: tsum(relu(dense(x, W, b)) ** 2)
    elif build == "quat_rotate":
        q = store.add("q", gen.normal(size=(1, 4)))
        p = store.add("p", gen.normal(size=(1, 6, 3)))
        c = gen.normal(size=(1, 6, 3))
        f = lambda: tsum(rotate_points(p, quat_to_rotmat(l2_normalize(q))) * c)
    else:
        x = store.add("x", gen.normal(size=(2, 5, 3)))
        c = gen.normal(size=(2, 3))
        f = lambda: tsum(l2_normalize(max_pool_points(x)) * c)
    assert grad_check(f, store) < 1e-4


def test_param_store_rules():
    store = ParamStore()
    w = store.add("w", np.ones((2, 2)))
    assert w.dtype == np.float32 and w.requires_grad
    with pytest.raises(ValueError):
        store.add("w", np.zeros(1))
    with pytest.raises(NoGradient):
        store.gradients()
    with pytest.raises(ShapeMismatch):
        store.load_state({"w": np.zeros((3, 3))})
    with pytest.raises(ShapeMismatch):
        store.load_state({"v": np.zeros((2, 2))})
    assert store.num_values() == 4


def test_state_dict_is_a_copy():
    store = ParamStore()
    store.add("w", np.ones(3))
    state = store.state_dict()
    state["w"][0] = 5.0
    assert store["w"].data[0] == 1.0


def test_glorot_bounds(rng):
    W = glorot_uniform(30, 10, rng)
    assert W.dtype == np.float32
    assert np.abs(W).max() <= np.sqrt(6.0 / 40.0)


def test_dense_identity_and_zero_input():
    x = Tensor(np.array([[1.0, -2.0, 3.0]]))
    np.testing.assert_array_equal(dense(x, Tensor(np.eye(3)), Tensor(np.zeros(3))).data, x.data)
    b = Tensor(np.array([0.5, 1.5]))
    np.testing.assert_array_equal(dense(Tensor(np.zeros((2, 3))), Tensor(np.ones((3, 2))), b).data,
                                  [[0.5, 1.5], [0.5, 1.5]])


def test_l2_normalize_hand_values():
    np.testing.assert_allclose(l2_normalize(Tensor(np.array([3.0, 4.0]))).data, [0.6, 0.8])
    np.testing.assert_array_equal(l2_normalize(Tensor(np.zeros(3))).data, np.zeros(3))


def test_dropout_keep_fraction():
    out = dropout(Tensor(np.ones(1_000_000)), 0.3, np.random.default_rng(2), training=True)
    assert np.mean(out.data > 0) == pytest.approx(0.7, abs=0.005)
