import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from st_impute import tensor as T
from st_impute.errors import ContractError, DegenerateRowError, NumericalError, ShapeError
from st_impute.tensor import NEG_SENTINEL, Tensor


def _check_grad(build, *inputs, tol=1e-4):
    """Tape gradient of sum(build(*inputs) * w) vs central differences."""
    rng = np.random.default_rng(123)
    out = build(*inputs)
    weights = Tensor(rng.uniform(-1, 1, size=out.shape))

    def f(_x=None):
        return T.sum_all(T.mul(build(*inputs), weights))

    for x in inputs:
        x.grad = None
    T.backward(f())
    for x in inputs:
        num = T.finite_difference_gradient(f, x)
        denom = np.maximum(np.maximum(np.abs(num), np.abs(x.grad)), 1e-6)
        assert np.max(np.abs(num - x.grad) / denom) < tol


def _rand(rng, *shape):
    return Tensor(rng.uniform(-2, 2, size=shape), requires_grad=True)


class TestMatmul:
    def test_identity(self):
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(T.matmul(Tensor(np.eye(2)), b).data, b.data)
        np.testing.assert_array_equal(T.matmul(b, Tensor(np.eye(2))).data, b.data)

    def test_worked_example(self):
        out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0, 6.0], [7.0, 8.0]]))
        np.testing.assert_array_equal(out.data, [[19.0, 22.0], [43.0, 50.0]])

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))

    @pytest.mark.parametrize("shapes", [((3, 4), (4, 2)), ((2, 3, 4), (4, 5)), ((2, 3, 4), (2, 4, 3))])
    def test_gradient(self, shapes):
        rng = np.random.default_rng(0)
        a, b = _rand(rng, *shapes[0]), _rand(rng, *shapes[1])
        _check_grad(T.matmul, a, b)


class TestElementwise:
    def test_relu_signs(self):
        np.testing.assert_array_equal(T.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_add_zero(self):
        x = Tensor([1.5, -2.0])
        np.testing.assert_array_equal(T.add(x, Tensor([0.0, 0.0])).data, x.data)

    def test_scale(self):
        np.testing.assert_array_equal(T.scale(Tensor([1.0, 2.0]), 0.5).data, [0.5, 1.0])

    def test_dispatch(self):
        np.testing.assert_array_equal(T.elementwise("relu", Tensor([-3.0, 3.0])).data, [0.0, 3.0])
        with pytest.raises(ContractError):
            T.elementwise("tanh", Tensor([1.0]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))

    def test_relu_gradient_only_where_positive(self):
        x = Tensor([-1.0, 0.5, 2.0], requires_grad=True)
        T.backward(T.sum_all(T.relu(x)))
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 1.0])

    @pytest.mark.parametrize("op", [T.add, T.sub, T.mul])
    def test_binary_gradients(self, op):
        rng = np.random.default_rng(1)
        _check_grad(op, _rand(rng, 3, 4), _rand(rng, 3, 4))

    def test_unary_gradients(self):
        rng = np.random.default_rng(2)
        # keep away from the kink at 0
        x = Tensor(rng.uniform(0.1, 2, size=(3, 4)) * rng.choice([-1, 1], size=(3, 4)), requires_grad=True)
        _check_grad(T.relu, x)
        _check_grad(T.absolute, x)
        _check_grad(lambda t: T.scale(t, -0.7), x)

    @pytest.mark.filterwarnings("ignore:overflow encountered")
    def test_non_finite_is_error(self):
        with pytest.raises(NumericalError):
            T.scale(Tensor([1e308]), 10.0)


class TestOtherOps:
    def test_bias_transpose_reshape_concat_gradients(self):
        rng = np.random.default_rng(3)
        x, b = _rand(rng, 2, 3, 4), _rand(rng, 4)
        _check_grad(T.add_bias, x, b)
        _check_grad(T.transpose, x)
        _check_grad(lambda t: T.reshape(t, (6, 4)), x)
        y = _rand(rng, 2, 3, 2)
        _check_grad(lambda a, c: T.concat_last([a, c]), x, y)

    def test_reductions_and_take_rows(self):
        rng = np.random.default_rng(4)
        x = _rand(rng, 3, 5, 2)
        _check_grad(lambda t: T.mean_axis(t, -2), x)
        _check_grad(lambda t: T.take_rows(t, [2, 0, 2]), x)

    def test_layer_norm(self):
        rng = np.random.default_rng(5)
        x, g, b = _rand(rng, 2, 3, 6), _rand(rng, 6), _rand(rng, 6)
        out = T.layer_norm(x, Tensor(np.ones(6)), Tensor(np.zeros(6)))
        np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-12)
        _check_grad(T.layer_norm, x, g, b)

    def test_cross_entropy(self):
        logits = Tensor(np.zeros((3, 4)))
        assert T.cross_entropy(logits, [0, 1, 3]).item() == pytest.approx(np.log(4))
        rng = np.random.default_rng(6)
        _check_grad(lambda t: T.cross_entropy(t, [1, 0, 2]), _rand(rng, 3, 3))


class TestSoftmaxRows:
    def test_uniform(self):
        p = T.softmax_rows(Tensor([[0.0, 0.0, 0.0]]), np.zeros((1, 3)))
        np.testing.assert_allclose(p.data, [[1 / 3] * 3], rtol=1e-15)

    def test_fully_masked_entry(self):
        p = T.softmax_rows(Tensor([[5.0, 5.0]]), np.array([[NEG_SENTINEL, 0.0]]))
        np.testing.assert_array_equal(p.data, [[0.0, 1.0]])

    def test_closed_form(self):
        p = T.softmax_rows(Tensor([[np.log(2.0), 0.0]]), np.zeros((1, 2)))
        np.testing.assert_allclose(p.data, [[2 / 3, 1 / 3]], rtol=1e-14)

    def test_degenerate_row(self):
        with pytest.raises(DegenerateRowError):
            T.softmax_rows(Tensor([[1.0, 2.0]]), np.full((1, 2), NEG_SENTINEL))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (4, 4), elements=st.floats(-5, 5)))
    def test_rows_sum_to_one_and_masked_zero(self, scores):
        mask = np.zeros((4, 4))
        np.fill_diagonal(mask, NEG_SENTINEL)
        p = T.softmax_rows(Tensor(scores), mask).data
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(np.diag(p) == 0.0)

    def test_gradient(self):
        rng = np.random.default_rng(7)
        mask = np.zeros((4, 4))
        np.fill_diagonal(mask, NEG_SENTINEL)
        _check_grad(lambda s: T.softmax_rows(s, mask), _rand(rng, 2, 4, 4))


class TestBackwardAndOracle:
    def test_backward_needs_scalar(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            T.backward(T.scale(x, 2.0))

    def test_unreachable_grads_untouched(self):
        a = Tensor([1.0], requires_grad=True)
        b = Tensor([5.0], requires_grad=True)
        b.grad = np.array([42.0])
        T.backward(T.sum_all(T.scale(a, 3.0)))
        np.testing.assert_array_equal(a.grad, [3.0])
        np.testing.assert_array_equal(b.grad, [42.0])

    def test_shared_node_visited_once(self):
        x = Tensor([2.0], requires_grad=True)
        y = T.mul(x, x)
        z = T.add(y, y)  # d/dx 2x^2 = 4x
        T.backward(T.sum_all(z))
        np.testing.assert_allclose(x.grad, [8.0])

    def test_topological_order_visits_each_node_once(self):
        x = Tensor([1.0], requires_grad=True)
        y = T.scale(x, 2.0)
        z = T.add(T.mul(y, y), y)
        order = T._topological_order(T.sum_all(z))
        assert len(order) == len({id(n) for n in order})
        pos = {id(n): i for i, n in enumerate(order)}
        for n in order:
            for p in n._parents:
                assert pos[id(p)] < pos[id(n)]

    def test_fd_known_derivative(self):
        x = Tensor([1.0, 2.0])
        g = T.finite_difference_gradient(lambda t: float((t.data**2).sum()), x)
        np.testing.assert_allclose(g, [2.0, 4.0], atol=1e-8)

    def test_fd_constant(self):
        g = T.finite_difference_gradient(lambda t: 3.0, Tensor([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(g, 0.0)

    def test_fd_rejects_bad_eps_and_nonfinite(self):
        with pytest.raises(ContractError):
            T.finite_difference_gradient(lambda t: 0.0, Tensor([1.0]), eps=0)
        with pytest.raises(NumericalError):
            T.finite_difference_gradient(lambda t: float("nan"), Tensor([1.0]))

    def test_dropout_is_seed_deterministic(self):
        x = Tensor(np.ones((4, 5)))
        a = T.dropout(x, 0.5, np.random.default_rng(9)).data
        b = T.dropout(x, 0.5, np.random.default_rng(9)).data
        np.testing.assert_array_equal(a, b)
        assert T.dropout(x, 0.5, None) is x
