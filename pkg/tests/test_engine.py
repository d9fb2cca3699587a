import numpy as np
import pytest
from src.core import DimensionError, NumericalError
from src.engine import Tensor, add, mul, tensor_sum, tensor_mean, concat, backward, grad_check, make_node
from src.process_layers import dense_forward, softmax_cross_entropy
from src.process_data import labels_to_onehot


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        backward(tensor_sum(x))
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_square_sum(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        backward(tensor_sum(mul(x, x)))
        np.testing.assert_allclose(x.grad, [2.0, 4.0])

    def test_detached_has_no_grad(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        c = Tensor([3.0, 4.0])
        backward(tensor_sum(mul(x, c)))
        assert c.grad is None
        np.testing.assert_allclose(x.grad, [3.0, 4.0])

    def test_leaf_gradients_accumulate(self):
        x = Tensor([1.0, -1.0], requires_grad=True)
        backward(tensor_sum(x))
        backward(tensor_sum(x))
        np.testing.assert_allclose(x.grad, [2.0, 2.0])

    def test_shared_node_sums_both_paths(self):
        x = Tensor([3.0], requires_grad=True)
        y = add(x, x)
        backward(tensor_sum(mul(y, x)))   # 2x² → 4x
        np.testing.assert_allclose(x.grad, [12.0])

    def test_broadcast_is_unbroadcast(self):
        x = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(np.ones((1, 3)), requires_grad=True)
        backward(tensor_sum(add(x, b)))
        np.testing.assert_allclose(b.grad, [[2.0, 2.0, 2.0]])

    def test_mean(self):
        x = Tensor(np.ones(4), requires_grad=True)
        backward(tensor_mean(x))
        np.testing.assert_allclose(x.grad, np.full(4, 0.25))

    def test_non_scalar_root_rejected(self):
        with pytest.raises(DimensionError):
            backward(Tensor(np.ones(3), requires_grad=True))

    def test_concat_routes_gradients(self):
        a = Tensor(np.ones((1, 2, 3)), requires_grad=True)
        b = Tensor(np.ones((1, 1, 3)), requires_grad=True)
        w = np.arange(9.0).reshape(1, 3, 3)
        backward(tensor_sum(mul(concat([a, b], axis=1), w)))
        np.testing.assert_allclose(a.grad, w[:, :2])
        np.testing.assert_allclose(b.grad, w[:, 2:])

    def test_concat_shape_mismatch(self):
        with pytest.raises(DimensionError):
            concat([Tensor(np.ones((1, 2, 3))), Tensor(np.ones((1, 2, 4)))], axis=1)

    def test_float32_stays_float32(self):
        x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
        y = mul(x, 2.0)
        assert y.dtype == np.float32


class TestGradCheck:
    def test_dense_softmax_ce(self, rng):
        onehot = labels_to_onehot([0, 2, 3], 4)
        inputs = [Tensor(rng.standard_normal((3, 4))), Tensor(rng.standard_normal((4, 4))),
                  Tensor(rng.standard_normal(4))]
        err = grad_check(lambda x, w, b: softmax_cross_entropy(dense_forward(x, w, b), onehot), inputs)
        assert err < 1e-6

    def test_requires_float64(self):
        x = Tensor(np.ones(3, dtype=np.float32))
        with pytest.raises(NumericalError):
            grad_check(lambda t: tensor_sum(t), [x])

    def test_detects_wrong_gradient(self):
        x = Tensor(np.array([0.5, 1.5]))

        def bad_square(t):
            # gradient sai có chủ ý: x thay vì 2x
            return tensor_sum(make_node(t.data ** 2, (t,), "bad", lambda g: (g * t.data,)))
        assert grad_check(bad_square, [x]) > 0.1
