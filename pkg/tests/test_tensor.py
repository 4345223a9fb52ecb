import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deepspec import tensor as T
from deepspec.errors import (
    ConfigurationError,
    ContractError,
    DimensionError,
    NotPositiveDefiniteError,
    NumericDomainError,
    SingularMatrixError,
)
from deepspec.oracle import finite_diff_grad


def grad_of(fn, *values):
    """Analytic gradients of a scalar function w.r.t. each numpy input."""
    leaves = [T.tensor(np.array(v, dtype=float), requires_grad=True) for v in values]
    fn(*leaves).backward()
    return [leaf.grad for leaf in leaves]


def numeric_grad(fn, values, which):
    values = [np.array(v, dtype=float) for v in values]

    def f(x):
        args = [T.tensor(v) for v in values]
        args[which] = T.tensor(x)
        return fn(*args).item()

    return finite_diff_grad(f, values[which].copy(), step=1e-6)


class TestBackward:
    def test_sum_of_product(self):
        ga, gb = grad_of(lambda a, b: T.tsum(a * b), [1.0, 2.0], [3.0, 4.0])
        np.testing.assert_array_equal(ga, [3.0, 4.0])
        np.testing.assert_array_equal(gb, [1.0, 2.0])

    def test_shared_subexpression_accumulates(self):
        (g,) = grad_of(lambda a: T.tsum(a * a + a), [2.0, -1.0])
        np.testing.assert_allclose(g, [5.0, -1.0])

    def test_second_backward_raises(self):
        a = T.tensor([1.0, 2.0], requires_grad=True)
        loss = T.tsum(a * a)
        loss.backward()
        with pytest.raises(ContractError):
            loss.backward()

    def test_non_scalar_rejected(self):
        a = T.tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            (a * 2.0).backward()

    def test_broadcast_gradient_reduced(self):
        ga, gb = grad_of(lambda a, b: T.tsum(a + b), np.ones((3, 2)), [1.0, 1.0])
        np.testing.assert_array_equal(gb, [3.0, 3.0])
        assert ga.shape == (3, 2)

    @pytest.mark.parametrize("op", [
        lambda a, b: T.tsum(a / b),
        lambda a, b: T.tsum(T.exp(a) * b),
        lambda a, b: T.tsum(T.log(b) * a),
        lambda a, b: T.tsum(T.sigmoid(a - b)),
        lambda a, b: T.tsum(T.softmax(a, axis=1) * b),
        lambda a, b: T.frobenius_norm_sq(a - b),
        lambda a, b: T.tsum(T.matmul(a, T.transpose(b))),
        lambda a, b: T.tsum(T.concat([a, b], axis=1) * T.concat([b, a], axis=1)),
    ])
    def test_against_central_differences(self, op):
        gen = np.random.default_rng(3)
        a = gen.normal(size=(3, 4))
        b = gen.uniform(0.5, 2.0, size=(3, 4))
        analytic = grad_of(op, a, b)
        for which in (0, 1):
            np.testing.assert_allclose(analytic[which], numeric_grad(op, [a, b], which), rtol=1e-5, atol=1e-7)


class TestElementwise:
    def test_log_rejects_non_positive(self):
        with pytest.raises(NumericDomainError):
            T.log(T.tensor([1.0, 0.0]))

    def test_sigmoid_is_stable_for_large_inputs(self):
        out = T.sigmoid(T.tensor([-1000.0, 0.0, 1000.0])).data
        np.testing.assert_array_equal(out, [0.0, 0.5, 1.0])

    def test_clip_blocks_gradient_outside(self):
        (g,) = grad_of(lambda a: T.tsum(T.clip(a, -1.0, 1.0)), [-2.0, 0.5, 3.0])
        np.testing.assert_array_equal(g, [0.0, 1.0, 0.0])

    def test_relu(self):
        (g,) = grad_of(lambda a: T.tsum(T.relu(a)), [-1.0, 2.0])
        np.testing.assert_array_equal(g, [0.0, 1.0])

    @given(arrays(np.float64, (5,), elements=st.floats(-50, 50)))
    def test_softmax_rows_sum_to_one(self, x):
        out = T.softmax(T.tensor(x.reshape(1, -1)), axis=1).data
        assert abs(out.sum() - 1.0) < 1e-12


class TestMatmul:
    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            T.matmul(T.tensor(np.ones((2, 3))), T.tensor(np.ones((2, 3))))

    def test_value(self):
        out = T.matmul(T.tensor([[1.0, 2.0]]), T.tensor([[3.0], [4.0]]))
        assert out.item() == 11.0


class TestCholesky:
    def test_two_by_two(self):
        low = T.cholesky_factor(np.array([[4.0, 2.0], [2.0, 3.0]]))
        np.testing.assert_allclose(low, [[2.0, 0.0], [1.0, np.sqrt(2.0)]])

    def test_not_positive_definite_names_pivot(self):
        with pytest.raises(NotPositiveDefiniteError) as info:
            T.cholesky_factor(np.array([[1.0, 2.0], [2.0, 1.0]]))
        assert info.value.index == 1

    def test_matches_numpy_on_random_spd(self):
        gen = np.random.default_rng(0)
        a = gen.normal(size=(6, 6))
        spd = a @ a.T + 6 * np.eye(6)
        np.testing.assert_allclose(T.cholesky_factor(spd), np.linalg.cholesky(spd), atol=1e-12)

    def test_singular_triangular_solve(self):
        with pytest.raises(SingularMatrixError):
            T.forward_substitute(np.array([[1.0, 0.0], [1.0, 0.0]]), np.ones(2))

    def test_triangular_solve_gradient(self):
        low = np.array([[2.0, 0.0], [1.0, 3.0]])
        rhs = np.array([[1.0, 2.0], [3.0, 4.0]])
        fn = lambda r: T.tsum(T.square(T.triangular_solve(low, r)))  # noqa: E731
        (g,) = grad_of(fn, rhs)
        np.testing.assert_allclose(g, numeric_grad(fn, [rhs], 0), rtol=1e-6)

    def test_forward_and_back_substitution_invert(self):
        gen = np.random.default_rng(1)
        low = np.tril(gen.normal(size=(5, 5))) + 5 * np.eye(5)
        b = gen.normal(size=5)
        np.testing.assert_allclose(low @ T.forward_substitute(low, b), b, atol=1e-12)
        np.testing.assert_allclose(low.T @ T.back_substitute_transposed(low, b), b, atol=1e-12)


def naive_conv(x, k, stride, pad):
    b, c, h, w = x.shape
    o, _, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((b, o, oh, ow))
    for i in range(oh):
        for j in range(ow):
            patch = xp[:, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
            out[:, :, i, j] = np.einsum("bchw,ochw->bo", patch, k)
    return out


class TestConvolution:
    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 2)])
    def test_matches_loop_reference(self, stride, pad):
        gen = np.random.default_rng(2)
        x = gen.normal(size=(2, 3, 7, 6))
        k = gen.normal(size=(4, 3, 3, 3))
        out = T.conv2d(T.tensor(x), T.tensor(k), stride, pad).data
        np.testing.assert_allclose(out, naive_conv(x, k, stride, pad), atol=1e-12)

    @pytest.mark.parametrize("stride,pad,extra", [(2, 1, 0), (2, 1, 1), (1, 1, 0)])
    def test_transpose_is_adjoint(self, stride, pad, extra):
        gen = np.random.default_rng(4)
        x = gen.normal(size=(2, 3, 7, 7))
        k = gen.normal(size=(4, 3, 3, 3))
        y = gen.normal(size=T.conv2d(T.tensor(x), T.tensor(k), stride, pad).shape)
        lhs = float((T.conv2d(T.tensor(x), T.tensor(k), stride, pad).data * y).sum())
        back = T.conv2d_transpose(T.tensor(y), T.tensor(k), stride, pad, extra).data
        assert back.shape[2] == (y.shape[2] - 1) * stride - 2 * pad + 3 + extra
        rhs = float((x * back[:, :, :7, :7]).sum())
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_gradients(self):
        gen = np.random.default_rng(5)
        x = gen.normal(size=(1, 2, 5, 5))
        k = gen.normal(size=(3, 2, 3, 3))
        fn = lambda a, b: T.tsum(T.square(T.conv2d(a, b, 2, 1)))  # noqa: E731
        analytic = grad_of(fn, x, k)
        for which in (0, 1):
            np.testing.assert_allclose(analytic[which], numeric_grad(fn, [x, k], which), rtol=1e-5, atol=1e-7)
        fn_t = lambda a, b: T.tsum(T.square(T.conv2d_transpose(a, b, 2, 1, 1)))  # noqa: E731
        y = gen.normal(size=(1, 3, 3, 3))
        analytic = grad_of(fn_t, y, k)
        for which in (0, 1):
            np.testing.assert_allclose(analytic[which], numeric_grad(fn_t, [y, k], which), rtol=1e-5, atol=1e-7)

    def test_bad_stride(self):
        with pytest.raises(ConfigurationError):
            T.conv2d(T.tensor(np.ones((1, 1, 4, 4))), T.tensor(np.ones((1, 1, 3, 3))), 0, 0)


class TestRng:
    def test_same_seed_same_stream(self):
        assert np.array_equal(T.Rng(7).normal((4,)), T.Rng(7).normal((4,)))

    def test_state_round_trip(self):
        rng = T.Rng(11)
        rng.normal((3,))
        words = rng.get_state()
        assert words.dtype == np.float64 and len(words) == 19
        expected = rng.normal((5,))
        other = T.Rng(0)
        other.set_state(words)
        np.testing.assert_array_equal(other.normal((5,)), expected)

    def test_spawn_is_deterministic_and_distinct(self):
        a, b = T.Rng(3).spawn(1), T.Rng(3).spawn(1)
        c = T.Rng(3).spawn(2)
        x = a.normal((4,))
        assert np.array_equal(x, b.normal((4,)))
        assert not np.array_equal(x, c.normal((4,)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_matmul_gradient_identity(n, k, m, seed):
    """d/dA sum(A @ B) is the row-sum of B broadcast over rows."""
    gen = np.random.default_rng(seed)
    a, b = gen.normal(size=(n, k)), gen.normal(size=(k, m))
    ga, _ = grad_of(lambda x, y: T.tsum(T.matmul(x, y)), a, b)
    np.testing.assert_allclose(ga, np.tile(b.sum(1), (n, 1)), atol=1e-12)
