import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.signal import correlate

from lvquant.errors import DimensionError, GradientCheckError, UsageError
from lvquant.numerics import (
    LayerSpec,
    Tensor,
    batchnorm,
    column_norms,
    conv2d,
    finite_diff_check,
    forward,
    hinge,
    lstm_step,
    maxpool2d,
    record_kinks,
    roll,
)


def numeric_grad(f, x, eps=1e-6):
    """Plain central differences, independent of the package's checker."""
    x = x.astype(np.float64).copy()
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        o = x[i]
        x[i] = o + eps
        fp = f(x)
        x[i] = o - eps
        fm = f(x)
        x[i] = o
        g[i] = (fp - fm) / (2 * eps)
    return g


def analytic_grad(build, x):
    t = Tensor(x.astype(np.float64), requires_grad=True)
    build(t).backward()
    return t.grad


# -- elementary gradients ----------------------------------------------------

def test_sum_of_params_has_unit_gradients():
    w = Tensor(np.random.default_rng(0).random((3, 4)), requires_grad=True)
    w.sum().backward()
    np.testing.assert_array_equal(w.grad, np.ones((3, 4)))


def test_half_squared_norm_gradient_is_w():
    v = np.random.default_rng(1).standard_normal(7)
    w = Tensor(v, requires_grad=True)
    ((w * w).sum() * 0.5).backward()
    np.testing.assert_allclose(w.grad, v, rtol=1e-15)


def test_backward_without_forward_is_a_usage_error():
    with pytest.raises(UsageError):
        Tensor(np.ones(3), requires_grad=True).backward()


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x
    (y + y * x).sum().backward()  # 2x^2 + ... : d/dx (x^2 + x^3) = 2x + 3x^2
    assert x.grad[0] == pytest.approx(4 + 12)


def test_hinge_subgradient_is_zero_at_kink():
    x = Tensor(np.array([-1.0, 0.0, 2.0]), requires_grad=True)
    hinge(x).sum().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_zero_column_norm_has_zero_subgradient():
    w = np.zeros((3, 4))
    w[:, 1] = [3.0, 4.0, 0.0]
    t = Tensor(w, requires_grad=True)
    column_norms(t).sum().backward()
    np.testing.assert_allclose(t.grad[:, 1], [0.6, 0.8, 0.0])
    np.testing.assert_array_equal(t.grad[:, [0, 2, 3]], 0.0)


def test_roll_gradient_matches_numeric():
    x = np.random.default_rng(2).standard_normal((2, 5, 3))
    c = np.random.default_rng(3).standard_normal((2, 5, 3))
    build = lambda t: (roll(t, 1, axis=1) * Tensor(c)).sum()
    np.testing.assert_allclose(analytic_grad(build, x), numeric_grad(lambda a: (np.roll(a, 1, 1) * c).sum(), x),
                               atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_elementwise_chain_gradients(seed):
    x = np.random.default_rng(seed).uniform(0.2, 2.0, size=(3, 4))
    build = lambda t: ((t.tanh() * t.sigmoid() + t.log() / t) ** 2).mean()
    f = lambda a: np.mean((np.tanh(a) / (1 + np.exp(-a)) + np.log(a) / a) ** 2)
    np.testing.assert_allclose(analytic_grad(build, x), numeric_grad(f, x), rtol=1e-6, atol=1e-9)


def test_matmul_broadcast_gradient():
    rng = np.random.default_rng(4)
    a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 5))
    tb = Tensor(b, requires_grad=True)
    (Tensor(a) @ tb).sum().backward()
    np.testing.assert_allclose(tb.grad, numeric_grad(lambda m: (a @ m).sum(), b), atol=1e-7)


# -- layers ------------------------------------------------------------------

def conv_layer(cin, cout, pad=2):
    return LayerSpec("conv", "c", padding=pad, channels_in=cin, channels_out=cout)


def test_impulse_kernel_conv_is_identity():
    x = np.random.default_rng(0).standard_normal((2, 9, 9, 1))
    w = np.zeros((5, 5, 1, 1))
    w[2, 2, 0, 0] = 1.0
    out = forward(conv_layer(1, 1), Tensor(x), weights={"w": Tensor(w), "b": Tensor(np.zeros(1))})
    np.testing.assert_array_equal(out.data, x)


@pytest.mark.parametrize("pad", [0, 2, 3])
def test_conv_matches_scipy_correlation(pad):
    rng = np.random.default_rng(pad)
    x = rng.standard_normal((1, 8, 8, 2))
    w = rng.standard_normal((5, 5, 2, 3))
    out = conv2d(Tensor(x), Tensor(w), None, pad=pad).data
    xp = np.pad(x[0], ((pad, pad), (pad, pad), (0, 0)))
    for o in range(3):
        ref = sum(correlate(xp[..., i], w[..., i, o], mode="valid") for i in range(2))
        np.testing.assert_allclose(out[0, ..., o], ref, atol=1e-12)


@pytest.mark.parametrize("pad", [0, 2, 6])
def test_conv_gradients_match_numeric(pad):
    rng = np.random.default_rng(10 + pad)
    x = rng.standard_normal((2, 6, 6, 2))
    w = rng.standard_normal((5, 5, 2, 2))
    c = rng.standard_normal(conv2d(Tensor(x), Tensor(w), None, pad=pad).shape)
    fx = lambda a: (conv2d(Tensor(a), Tensor(w), None, pad=pad).data * c).sum()
    fw = lambda m: (conv2d(Tensor(x), Tensor(m), None, pad=pad).data * c).sum()
    np.testing.assert_allclose(analytic_grad(lambda t: (conv2d(t, Tensor(w), None, pad=pad) * Tensor(c)).sum(), x),
                               numeric_grad(fx, x), atol=1e-7)
    np.testing.assert_allclose(analytic_grad(lambda t: (conv2d(Tensor(x), t, None, pad=pad) * Tensor(c)).sum(), w),
                               numeric_grad(fw, w), atol=1e-7)


def test_maxpool_of_constant_is_constant():
    x = np.full((1, 25, 25, 3), 4.5)
    out = forward(LayerSpec("pool", "p", stride=3, padding=1), Tensor(x))
    assert out.shape == (1, 8, 8, 3)
    np.testing.assert_array_equal(out.data, 4.5)


def test_maxpool_matches_loop_oracle_and_gradient():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 11, 11, 2))
    out = maxpool2d(Tensor(x), k=5, stride=3, pad=1).data
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)), constant_values=-np.inf)
    for n, i, j, ch in np.ndindex(out.shape):
        assert out[n, i, j, ch] == xp[n, 3 * i:3 * i + 5, 3 * j:3 * j + 5, ch].max()
    c = rng.standard_normal(out.shape)
    f = lambda a: (maxpool2d(Tensor(a), 5, 3, 1).data * c).sum()
    np.testing.assert_allclose(analytic_grad(lambda t: (maxpool2d(t, 5, 3, 1) * Tensor(c)).sum(), x),
                               numeric_grad(f, x), atol=1e-7)


def test_batchnorm_train_statistics():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((4, 5, 5, 3)) * [1.0, 5.0, 0.1] + [2.0, -3.0, 0.5]
    mean, var = np.zeros(3), np.ones(3)
    out = batchnorm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), mean, var, train=True).data
    flat = out.reshape(-1, 3)
    np.testing.assert_allclose(flat.mean(axis=0), 0, atol=1e-5)
    # the stabilizing eps shrinks the variance to v / (v + eps)
    v = x.reshape(-1, 3).var(axis=0)
    np.testing.assert_allclose(flat.var(axis=0), v / (v + 1e-5), atol=1e-10)
    assert abs(flat.var(axis=0)[1] - 1) < 1e-5  # wide channel: eps negligible
    assert not np.allclose(mean, 0)  # running averages moved


def test_batchnorm_gradients_train_and_eval():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((3, 4, 4, 2))
    gamma, beta = rng.standard_normal(2), rng.standard_normal(2)
    c = rng.standard_normal(x.shape)
    for train in (True, False):
        rm, rv = np.array([0.1, -0.2]), np.array([1.5, 0.7])

        def f(a, train=train):
            return (batchnorm(Tensor(a), Tensor(gamma), Tensor(beta), rm.copy(), rv.copy(), train=train).data * c).sum()

        build = lambda t, train=train: (batchnorm(t, Tensor(gamma), Tensor(beta), rm.copy(), rv.copy(),
                                                  train=train) * Tensor(c)).sum()
        np.testing.assert_allclose(analytic_grad(build, x), numeric_grad(f, x), atol=1e-6)


def test_dropout_eval_is_exact_identity():
    x = Tensor(np.random.default_rng(8).standard_normal((4, 10)))
    layer = LayerSpec("dropout", "d", dropout_rate=0.5)
    assert forward(layer, x, "eval", seed=1) is x


def test_dropout_train_is_seeded_and_inverted():
    x = Tensor(np.ones((200, 50)))
    layer = LayerSpec("dropout", "d", dropout_rate=0.5)
    a = forward(layer, x, "train", seed=3).data
    b = forward(layer, x, "train", seed=3).data
    np.testing.assert_array_equal(a, b)
    assert set(np.unique(a)) == {0.0, 2.0}
    assert a.mean() == pytest.approx(1.0, abs=0.05)


def test_layer_spec_contracts():
    with pytest.raises(ValueError):
        LayerSpec("conv", kernel=(3, 3))
    with pytest.raises(ValueError):
        LayerSpec("dropout", dropout_rate=1.0)


def test_conv_channel_mismatch_names_layer():
    with pytest.raises(DimensionError, match="conv9"):
        forward(LayerSpec("conv", "conv9", channels_in=2, channels_out=1), Tensor(np.zeros((1, 8, 8, 3))),
                weights={"w": Tensor(np.zeros((5, 5, 2, 1)))})


# -- LSTM --------------------------------------------------------------------

def lstm_params(D, H, scale=0.0, seed=0):
    rng = np.random.default_rng(seed)
    return {"wx": Tensor(scale * rng.standard_normal((D, 4 * H))),
            "wh": Tensor(scale * rng.standard_normal((H, 4 * H))),
            "b": Tensor(scale * rng.standard_normal(4 * H))}


def test_lstm_zero_weights():
    c_prev = np.array([[0.4, -1.2, 3.0]])
    h, c = lstm_step(lstm_params(2, 3), Tensor(np.ones((1, 2))), Tensor(np.zeros((1, 3))), Tensor(c_prev))
    np.testing.assert_allclose(c.data, 0.5 * c_prev, rtol=1e-15)
    np.testing.assert_allclose(h.data, 0.5 * np.tanh(0.5 * c_prev), rtol=1e-15)


def test_lstm_saturated_forget_gate_keeps_cell():
    p = lstm_params(2, 3)
    p["b"].data[3:6] = 20.0
    c_prev = np.array([[0.4, -1.2, 3.0]])
    _, c = lstm_step(p, Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 3))), Tensor(c_prev))
    np.testing.assert_allclose(c.data, c_prev, rtol=1e-8)


def _straight_line_lstm(wx, wh, b, x, h, c):
    H = len(h)
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    z = [b[j] + sum(x[i] * wx[i][j] for i in range(len(x))) + sum(h[i] * wh[i][j] for i in range(H))
         for j in range(4 * H)]
    c_new, h_new = [], []
    for k in range(H):
        i_g, f_g = sig(z[k]), sig(z[H + k])
        g_g, o_g = math.tanh(z[2 * H + k]), sig(z[3 * H + k])
        c_new.append(f_g * c[k] + i_g * g_g)
        h_new.append(o_g * math.tanh(c_new[k]))
    return h_new, c_new


def test_lstm_matches_straight_line_evaluation():
    rng = np.random.default_rng(9)
    p = lstm_params(2, 3, scale=0.7, seed=9)
    x, h0, c0 = rng.standard_normal(2), rng.standard_normal(3), rng.standard_normal(3)
    h, c = lstm_step(p, Tensor(x[None]), Tensor(h0[None]), Tensor(c0[None]))
    hr, cr = _straight_line_lstm(p["wx"].data.tolist(), p["wh"].data.tolist(), p["b"].data.tolist(),
                                 x.tolist(), h0.tolist(), c0.tolist())
    np.testing.assert_allclose(h.data[0], hr, rtol=1e-13)
    np.testing.assert_allclose(c.data[0], cr, rtol=1e-13)


def test_lstm_rejects_wrong_state_size():
    with pytest.raises(DimensionError):
        lstm_step(lstm_params(2, 3), Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 3))))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 5.0))
def test_lstm_hidden_state_bounded_on_zero_input(seed, scale):
    p = lstm_params(3, 4, scale=scale, seed=seed)
    h, c = Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 4)))
    for _ in range(15):
        h, c = lstm_step(p, Tensor(np.zeros((1, 3))), h, c)
        assert np.all(np.abs(h.data) < 1)


# -- finite-difference checker -------------------------------------------------

def test_checker_on_quadratic():
    rng = np.random.default_rng(11)
    A = rng.standard_normal((4, 4))
    A = A @ A.T
    rep = finite_diff_check(lambda t: ((t["x"] @ Tensor(A)) * t["x"]).sum() * 0.5,
                            {"x": rng.standard_normal((3, 4))})
    assert rep.passed and rep.max_rel_error < 1e-8


def test_checker_kink_policy():
    fn = lambda t: hinge(t["x"]).sum() * 3.0
    away = finite_diff_check(fn, {"x": np.array([1.0])})
    assert away.passed and away.entries[0].excluded == 0
    near = finite_diff_check(fn, {"x": np.array([3e-6])}, epsilon=1e-5)
    assert near.entries[0].excluded == 1 and near.entries[0].checked == 0


def test_checker_reports_wrong_gradients():
    def bad(t):
        x = t["x"]
        return Tensor._make(np.sum(x.data ** 2), (x,), lambda g: (g * x.data,))  # missing factor 2
    rep = finite_diff_check(bad, {"x": np.array([1.0, 2.0])})
    assert not rep.passed
    assert "FAIL" in rep.to_text()


def test_checker_aborts_on_nondeterminism():
    rng = np.random.default_rng(0)
    with pytest.raises(GradientCheckError, match="deterministic"):
        finite_diff_check(lambda t: (t["x"] * rng.random()).sum(), {"x": np.ones(2)})


def test_kink_log_records_relu_patterns():
    with record_kinks() as log:
        Tensor(np.array([-1.0, 2.0])).relu()
    assert len(log) == 1
