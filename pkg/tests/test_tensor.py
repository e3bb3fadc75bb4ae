import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from rmtransformer import ops
from rmtransformer.gradcheck import grad_check
from rmtransformer.init import kaiming_init
from rmtransformer.rng import Rng64
from rmtransformer.tensor import ParamSet, Tensor, backward, double_precision, no_grad


def conv2d_loops(x, w, b, stride, pad):
    """Direct nested-loop cross-correlation."""
    B, Cin, H, W = x.shape
    Cout, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    out = np.zeros((B, Cout, Ho, Wo))
    for n in range(B):
        for o in range(Cout):
            for i in range(Ho):
                for j in range(Wo):
                    acc = b[o]
                    for c in range(Cin):
                        for di in range(k):
                            for dj in range(k):
                                acc += w[o, c, di, dj] * xp[n, c, i * stride + di, j * stride + dj]
                    out[n, o, i, j] = acc
    return out


def rand(rng, *shape):
    return rng.standard_normal(shape)


# matmul ---------------------------------------------------------------------

def test_matmul_identity_and_hand_product():
    b = Tensor([[5.0, 6.0], [7.0, 8.0]])
    assert np.array_equal(ops.matmul(Tensor(np.eye(2)), b).data, b.data)
    out = ops.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), b)
    assert np.array_equal(out.data, [[19, 22], [43, 50]])


def test_matmul_annihilator_and_mismatch():
    a = Tensor(np.random.default_rng(0).standard_normal((3, 4)))
    assert not ops.matmul(a, Tensor(np.zeros((4, 2)))).data.any()
    with pytest.raises(ValueError):
        ops.matmul(a, Tensor(np.zeros((3, 2))))


def test_backward_sum_of_product_gives_b_transpose():
    rng = np.random.default_rng(1)
    with double_precision():
        A = Tensor(rand(rng, 3, 4), requires_grad=True)
        B = Tensor(rand(rng, 4, 5), requires_grad=True)
        ops.sum_all(ops.matmul(A, B)).backward()
    np.testing.assert_allclose(A.grad, np.ones((3, 5)) @ B.data.T, rtol=1e-12)
    np.testing.assert_allclose(B.grad, A.data.T @ np.ones((3, 5)), rtol=1e-12)


# softmax / gelu / layer norm --------------------------------------------------

def test_softmax_examples():
    np.testing.assert_allclose(ops.softmax_lastdim(Tensor([2.0, 2.0, 2.0])).data, [1 / 3] * 3, rtol=1e-6)
    with double_precision():
        y = ops.softmax_lastdim(Tensor([0.0, math.log(2.0)])).data
    np.testing.assert_allclose(y, [1 / 3, 2 / 3], rtol=1e-14)
    y = ops.softmax_lastdim(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(y))
    assert y[0] == pytest.approx(1.0) and y[1] == pytest.approx(0.0, abs=1e-30)


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=7),
                  elements=st.floats(-1e6, 1e6)))
def test_softmax_rows_sum_to_one(x):
    with double_precision():
        y = ops.softmax_lastdim(Tensor(x)).data
    assert np.all(np.abs(y.sum(axis=-1) - 1.0) <= 1e-12)


def test_gelu_values():
    with double_precision():
        y = ops.gelu(Tensor([0.0, 1.0, 10.0])).data
    assert y[0] == 0.0
    # independent: Phi(1) through math.erf
    assert y[1] == pytest.approx(0.5 * (1 + math.erf(1 / math.sqrt(2))), abs=1e-15)
    assert y[1] == pytest.approx(0.841345, abs=1e-6)
    assert y[2] == pytest.approx(10.0, abs=1e-12)


def test_layer_norm_examples():
    with double_precision():
        one, zero = Tensor(np.ones(2)), Tensor(np.zeros(2))
        const = Tensor(np.full((1, 2, 1, 1), 3.0))
        assert not ops.layer_norm_channels(const, one, zero).data.any()
        y = ops.layer_norm_channels(Tensor(np.array([1.0, 3.0]).reshape(1, 2, 1, 1)), one, zero).data
        np.testing.assert_allclose(y.ravel(), [-1, 1], atol=1e-5)
        rng = np.random.default_rng(2)
        x = Tensor(rand(rng, 2, 5, 3, 3))
        beta = rng.standard_normal()
        y = ops.layer_norm_channels(x, Tensor(np.ones(5)), Tensor(np.full(5, beta))).data
        np.testing.assert_allclose(y.mean(axis=1), beta, atol=1e-12)
    with pytest.raises(ValueError):
        ops.layer_norm_channels(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))


# convolution ------------------------------------------------------------------

def test_conv2d_identity_kernel():
    x = Tensor(np.random.default_rng(3).standard_normal((1, 3, 5, 5)))
    w = Tensor(np.eye(3).reshape(3, 3, 1, 1))
    np.testing.assert_array_equal(ops.conv2d(x, w, Tensor(np.zeros(3))).data, x.data)


def test_conv2d_ones_kernel_counts_taps():
    x = Tensor(np.full((1, 1, 4, 4), 2.0))
    y = ops.conv2d(x, Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)), stride=1, pad=1).data[0, 0]
    assert y[1, 1] == 18 and y[2, 2] == 18
    assert y[0, 0] == 8 and y[3, 3] == 8 and y[0, 3] == 8


@pytest.mark.parametrize("shape,cout,k,stride,pad", [
    ((2, 3, 8, 8), 4, 3, 1, 1),
    ((2, 3, 8, 8), 5, 3, 2, 1),
    ((1, 4, 7, 6), 2, 2, 2, 0),
    ((2, 2, 5, 5), 3, 1, 1, 0),
])
def test_conv2d_matches_nested_loops(shape, cout, k, stride, pad):
    rng = np.random.default_rng(4)
    x, w, b = rand(rng, *shape), rand(rng, cout, shape[1], k, k), rand(rng, cout)
    with double_precision():
        y = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad).data
    np.testing.assert_allclose(y, conv2d_loops(x, w, b, stride, pad), atol=1e-6)


def test_conv2d_float32_matches_loops_on_larger_input():
    rng = np.random.default_rng(5)
    x, w, b = rand(rng, 2, 4, 16, 16), rand(rng, 3, 4, 3, 3), rand(rng, 3)
    y = ops.conv2d(Tensor(x.astype(np.float32)), Tensor(w), Tensor(b), stride=1, pad=1).data
    with double_precision():
        y64 = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=1, pad=1).data
    np.testing.assert_allclose(y64, conv2d_loops(x, w, b, 1, 1), atol=1e-6)
    np.testing.assert_allclose(y, y64, atol=1e-4)


def test_conv2d_errors():
    x = Tensor(np.zeros((1, 2, 4, 4)))
    with pytest.raises(ValueError):
        ops.conv2d(x, Tensor(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ValueError):
        ops.conv2d(x, Tensor(np.zeros((1, 2, 5, 5))))


def test_conv_transpose_scatter_definition():
    w = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    y = ops.conv_transpose2d(Tensor(np.full((1, 1, 1, 1), 2.5)), Tensor(w), Tensor(np.zeros(1))).data
    np.testing.assert_array_equal(y[0, 0], 2.5 * w[0, 0])
    y = ops.conv_transpose2d(Tensor(np.zeros((2, 3, 5, 7))), Tensor(np.zeros((3, 4, 2, 2))))
    assert y.shape == (2, 4, 10, 14)
    with pytest.raises(ValueError):
        ops.conv_transpose2d(Tensor(np.zeros((1, 3, 2, 2))), Tensor(np.zeros((2, 4, 2, 2))))


@pytest.mark.parametrize("seed", range(3))
def test_conv_transpose_is_adjoint_of_stride2_conv(seed):
    rng = np.random.default_rng(seed)
    cin, cout = 3, 5
    w = rand(rng, cin, cout, 2, 2)
    y = rand(rng, 2, cin, 4, 6)
    with double_precision():
        x = Tensor(np.zeros((2, cout, 8, 12)), requires_grad=True)
        # <conv2d(x; w), y> differentiated w.r.t. x is the transposed conv of y
        out = ops.conv2d(x, Tensor(w), None, stride=2, pad=0)
        ops.sum_all(ops.mul(out, Tensor(y))).backward()
        tconv = ops.conv_transpose2d(Tensor(y), Tensor(w)).data
    np.testing.assert_allclose(tconv, x.grad, atol=1e-6)


def test_concat_channels():
    rng = np.random.default_rng(6)
    with double_precision():
        a = Tensor(rand(rng, 1, 2, 4, 4), requires_grad=True)
        b = Tensor(rand(rng, 1, 3, 4, 4), requires_grad=True)
        c = ops.concat_channels(a, b)
        assert c.shape == (1, 5, 4, 4)
        np.testing.assert_array_equal(c.data[:, :2], a.data)
        np.testing.assert_array_equal(c.data[:, 2:], b.data)
        g = rand(rng, 1, 5, 4, 4)
        ops.sum_all(ops.mul(c, Tensor(g))).backward()
    np.testing.assert_array_equal(a.grad, g[:, :2])
    np.testing.assert_array_equal(b.grad, g[:, 2:])
    with pytest.raises(ValueError):
        ops.concat_channels(a, Tensor(np.zeros((1, 3, 4, 5))))


# backward -------------------------------------------------------------------

def test_backward_square_and_independent_param():
    with double_precision():
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        p = Tensor(np.ones(3), requires_grad=True)
        params = ParamSet({"x": x, "p": p})
        params.zero_grad()
        backward(ops.sum_all(ops.mul(x, x)))
    np.testing.assert_array_equal(x.grad, 2 * x.data)
    np.testing.assert_array_equal(p.grad, np.zeros(3))


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        backward(ops.mul(x, 2.0))


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = ops.mul(x, 2.0)
    assert y.node is None and not y.requires_grad


def test_backward_deterministic():
    rng = np.random.default_rng(7)
    x0, w0 = rand(rng, 2, 3, 8, 8), rand(rng, 4, 3, 3, 3)

    def run():
        x = Tensor(x0, requires_grad=True)
        w = Tensor(w0, requires_grad=True)
        y = ops.gelu(ops.conv2d(x, w, None, stride=1, pad=1))
        ops.mean_all(ops.mul(y, y)).backward()
        return x.grad.tobytes(), w.grad.tobytes()

    assert run() == run()


# gradient checks ----------------------------------------------------------------

def _params(rng, **shapes):
    return ParamSet({k: Tensor(rng.standard_normal(s)) for k, s in shapes.items()})


GRAD_CASES = {
    "matmul": ([dict(a=(3, 4), b=(4, 2)), dict(a=(2, 3, 5), b=(2, 5, 4)), dict(a=(1, 1), b=(1, 3))],
               lambda p: ops.sum_all(ops.mul(ops.matmul(p["a"], p["b"]), ops.matmul(p["a"], p["b"])))),
    "linear": ([dict(x=(3, 4), w=(2, 4)), dict(x=(2, 3, 5), w=(5, 5)), dict(x=(1, 2), w=(3, 2))],
               lambda p: ops.sum_all(ops.gelu(ops.linear(p["x"], p["w"])))),
    "softmax": ([dict(x=(4,)), dict(x=(2, 3, 5)), dict(x=(3, 1))],
                lambda p: ops.sum_all(ops.mul(ops.softmax_lastdim(p["x"]), ops.softmax_lastdim(p["x"])))),
    "gelu": ([dict(x=(5,)), dict(x=(2, 3, 4)), dict(x=(1, 2, 3, 3))],
             lambda p: ops.sum_all(ops.mul(ops.gelu(p["x"]), p["x"]))),
    "sigmoid": ([dict(x=(5,)), dict(x=(2, 3)), dict(x=(1, 1, 3, 3))],
                lambda p: ops.sum_all(ops.mul(ops.sigmoid(p["x"]), p["x"]))),
    "layer_norm": ([dict(x=(2, 3, 2, 2), g=(3,), b=(3,)), dict(x=(1, 5, 3, 1), g=(5,), b=(5,)),
                    dict(x=(3, 2, 1, 2), g=(2,), b=(2,))],
                   lambda p: ops.sum_all(ops.gelu(ops.layer_norm_channels(p["x"], p["g"], p["b"])))),
    "conv2d": ([dict(x=(2, 3, 6, 6), w=(4, 3, 3, 3), b=(4,)), dict(x=(1, 2, 8, 8), w=(3, 2, 3, 3), b=(3,)),
                dict(x=(2, 4, 4, 4), w=(2, 4, 1, 1), b=(2,))],
               None),
    "conv_transpose2d": ([dict(x=(2, 3, 3, 3), w=(3, 4, 2, 2), b=(4,)), dict(x=(1, 1, 2, 5), w=(1, 2, 2, 2), b=(2,)),
                          dict(x=(1, 4, 2, 2), w=(4, 1, 2, 2), b=(1,))],
                         lambda p: ops.sum_all(ops.gelu(ops.conv_transpose2d(p["x"], p["w"], p["b"])))),
    "concat": ([dict(a=(1, 2, 3, 3), b=(1, 1, 3, 3)), dict(a=(2, 1, 2, 2), b=(2, 3, 2, 2)),
                dict(a=(1, 1, 1, 4), b=(1, 1, 1, 4))],
               lambda p: ops.sum_all(ops.gelu(ops.concat_channels(p["a"], p["b"])))),
    "upsample": ([dict(x=(1, 2, 2, 2)), dict(x=(2, 1, 3, 2)), dict(x=(1, 3, 1, 1))],
                 lambda p: ops.sum_all(ops.gelu(ops.upsample_nearest2x(p["x"])))),
    "permute_reshape": ([dict(x=(2, 3, 4)), dict(x=(1, 2, 2, 3)), dict(x=(4, 1, 2))],
                        lambda p: ops.sum_all(ops.gelu(ops.reshape(ops.permute(p["x"], tuple(reversed(range(p["x"].ndim)))), (-1,))))),
}


def _conv_case(stride):
    def f(p):
        k = p["w"].shape[-1]
        return ops.sum_all(ops.gelu(ops.conv2d(p["x"], p["w"], p["b"], stride=stride, pad=k // 2)))
    return f


@pytest.mark.parametrize("op", sorted(GRAD_CASES))
def test_grad_check_every_op(op):
    shapes, f = GRAD_CASES[op]
    rng = np.random.default_rng(8)
    with double_precision():
        for i, s in enumerate(shapes):
            fn = f if f is not None else _conv_case(1 + i % 2)
            report = grad_check(fn, _params(rng, **s))
            assert report.passed, (op, s, report.max_rel_error)


def test_grad_check_quadratic_and_conv_mse():
    rng = np.random.default_rng(9)
    with double_precision():
        report = grad_check(lambda p: ops.sum_all(ops.mul(p["x"], p["x"])), _params(rng, x=(3, 3)))
        assert report.passed and report.worst < 1e-8
        target = Tensor(rng.standard_normal((1, 2, 5, 5)))
        report = grad_check(
            lambda p: ops.mse(ops.conv2d(p["x"], p["w"], p["b"], 1, 1), target),
            _params(rng, x=(1, 3, 5, 5), w=(2, 3, 3, 3), b=(2,)),
        )
    assert report.passed


def test_grad_check_flags_corrupted_backward(monkeypatch):
    monkeypatch.setattr(ops, "_gelu_grad", lambda x: 0.9 * (0.5 * (1 + np.tanh(x))))
    rng = np.random.default_rng(10)
    with double_precision():
        report = grad_check(lambda p: ops.sum_all(ops.gelu(p["x"])), _params(rng, x=(4, 4)))
    assert not report.passed


def test_grad_check_requires_double():
    params = ParamSet({"x": Tensor(np.ones(2, dtype=np.float32))})
    with pytest.raises(TypeError):
        grad_check(lambda p: ops.sum_all(p["x"]), params)


# init -------------------------------------------------------------------------

def test_kaiming_bound_and_determinism():
    t1 = kaiming_init((8, 8, 3, 3), 72, Rng64(5))
    t2 = kaiming_init((8, 8, 3, 3), 72, Rng64(5))
    assert t1.data.tobytes() == t2.data.tobytes()
    assert math.sqrt(6 / 72) == pytest.approx(0.288675, abs=1e-6)
    assert np.abs(t1.data).max() <= math.sqrt(6 / 72)


def test_kaiming_million_draws_within_bound():
    t = kaiming_init((1000, 1000), 72, Rng64(123))
    bound = math.sqrt(6 / 72)
    assert np.all(np.abs(t.data) <= np.float32(bound))
    # roughly uniform: mean ~0, both halves populated
    assert abs(float(t.data.mean())) < 1e-3
    assert t.data.min() < -0.99 * bound and t.data.max() > 0.99 * bound


def test_kaiming_rejects_bad_fan_in():
    with pytest.raises(ValueError):
        kaiming_init((2,), 0, Rng64(0))
