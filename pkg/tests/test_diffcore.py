import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtscyclegan.diffcore import (LSTM, Adam, Conv1D, Dense, LastStep, check_layer,
                                  finite_difference_check, relative_error, relu_margin)
from mtscyclegan.errors import NumericError, ShapeError


def _sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def _lstm_reference(x, Wx, Wh, b):
    # scalar-loop evaluation of the gate equations
    B, T, D = x.shape
    H = Wh.shape[0]
    out = np.zeros((B, T, H))
    for n in range(B):
        h = [0.0] * H
        c = [0.0] * H
        for t in range(T):
            z = [b[k] + sum(x[n, t, d] * Wx[d, k] for d in range(D)) + sum(h[j] * Wh[j, k] for j in range(H))
                 for k in range(4 * H)]
            new_h = []
            for u in range(H):
                i = _sigmoid(z[u])
                f = _sigmoid(z[H + u])
                o = _sigmoid(z[2 * H + u])
                g = math.tanh(z[3 * H + u])
                c[u] = f * c[u] + i * g
                new_h.append(o * math.tanh(c[u]))
            h = new_h
            out[n, t] = h
    return out


def _conv_reference(x, W, b):
    B, T, C = x.shape
    k, _, F = W.shape
    left = (k - 1) // 2
    y = np.zeros((B, T, F))
    for n in range(B):
        for t in range(T):
            for j in range(k):
                s = t + j - left
                if 0 <= s < T:
                    y[n, t] += x[n, s] @ W[j]
            y[n, t] += b
    return y


def _rng_layer(layer, seed, std=0.5):
    rng = np.random.default_rng(seed)
    for k, v in layer.params.items():
        v[...] = rng.normal(0, std, v.shape)
    return layer


class TestForward:
    def test_dense_matches_matmul(self):
        d = _rng_layer(Dense("d", 3, 2, dtype=np.float64), 0)
        x = np.random.default_rng(1).normal(size=(4, 3))
        y, _ = d.forward(x)
        ref = [[sum(x[i, a] * d.params["W"][a, j] for a in range(3)) + d.params["b"][j] for j in range(2)]
               for i in range(4)]
        np.testing.assert_allclose(y, ref, rtol=1e-12)

    def test_dense_relu(self):
        d = Dense("d", 1, 1, activation="relu", dtype=np.float64)
        d.params["W"][...] = 1.0
        y, _ = d.forward(np.array([[-2.0], [3.0]]))
        assert y.ravel().tolist() == [0.0, 3.0]

    def test_dense_bad_features(self):
        with pytest.raises(ShapeError, match="expected last dimension"):
            Dense("d", 32, 4).forward(np.zeros((2, 16), dtype=np.float32))

    @pytest.mark.parametrize("k", [1, 2, 3, 5])
    def test_conv_same_padding(self, k):
        conv = _rng_layer(Conv1D("c", 3, 4, k, activation="linear", dtype=np.float64), k)
        x = np.random.default_rng(2).normal(size=(2, 9, 3))
        y, _ = conv.forward(x)
        assert y.shape == (2, 9, 4)
        np.testing.assert_allclose(y, _conv_reference(x, conv.params["W"], conv.params["b"]), rtol=1e-10)

    def test_conv_relu_nonnegative(self):
        conv = _rng_layer(Conv1D("c", 4, 8, 5, dtype=np.float64), 3)
        y, _ = conv.forward(np.random.default_rng(0).normal(size=(3, 72, 4)))
        assert y.shape == (3, 72, 8) and y.min() >= 0

    def test_conv_channel_mismatch(self):
        with pytest.raises(ShapeError):
            Conv1D("c", 4, 8, 5).forward(np.zeros((1, 10, 3), dtype=np.float32))

    def test_lstm_matches_reference(self):
        lstm = _rng_layer(LSTM("l", 3, 2, dtype=np.float64), 4)
        x = np.random.default_rng(5).normal(size=(2, 6, 3))
        y, _ = lstm.forward(x)
        ref = _lstm_reference(x, lstm.params["Wx"], lstm.params["Wh"], lstm.params["b"])
        np.testing.assert_allclose(y, ref, rtol=1e-10, atol=1e-12)

    def test_lstm_init(self):
        lstm = LSTM("l", 4, 64, rng=np.random.default_rng(0))
        b = lstm.params["b"]
        assert np.all(b[64:128] == 1.0) and np.all(b[:64] == 0) and np.all(b[128:] == 0)
        assert np.abs(lstm.params["Wh"]).max() <= 1 / 8

    def test_lstm_float32_close_to_float64(self):
        lstm = LSTM("l", 4, 16, rng=np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(3, 20, 4)).astype(np.float32)
        y32, _ = lstm.forward(x)
        y64, _ = lstm.astype(np.float64).forward(x.astype(np.float64))
        assert y32.dtype == np.float32
        np.testing.assert_allclose(y32, y64, atol=1e-5)

    def test_last_step(self):
        x = np.arange(24.0).reshape(2, 3, 4)
        y, cache = LastStep("last").forward(x)
        assert np.array_equal(y, x[:, -1])
        dx, grads = LastStep("last").backward(cache, np.ones((2, 4)))
        assert dx[:, :-1].sum() == 0 and dx[:, -1].sum() == 8 and grads == {}

    def test_backward_wrong_grad_shape(self):
        d = Dense("d", 3, 2)
        _, cache = d.forward(np.zeros((4, 3), dtype=np.float32))
        with pytest.raises(ShapeError):
            d.backward(cache, np.zeros((4, 3), dtype=np.float32))

    def test_backward_without_cache(self):
        with pytest.raises(Exception):
            Dense("d", 3, 2).backward(None, np.zeros((4, 2)))


class TestGradients:
    @pytest.mark.parametrize("seed", range(3))
    def test_dense(self, seed):
        d = _rng_layer(Dense("dense", 5, 3, activation="relu", dtype=np.float64), seed)
        x = np.random.default_rng(seed + 10).normal(size=(4, 5))
        if relu_margin([d], x) < 1e-3:
            pytest.skip("kink too close")
        assert check_layer(d, x).passed

    @pytest.mark.parametrize("k", [1, 3, 4])
    def test_conv(self, k):
        conv = _rng_layer(Conv1D("conv", 3, 4, k, activation="linear", dtype=np.float64), k)
        x = np.random.default_rng(k).normal(size=(2, 7, 3))
        rep = check_layer(conv, x)
        assert rep.passed, rep.errors

    def test_lstm(self):
        lstm = _rng_layer(LSTM("lstm", 3, 4, dtype=np.float64), 7)
        x = np.random.default_rng(8).normal(size=(2, 6, 3))
        rep = check_layer(lstm, x)
        assert rep.passed, rep.errors
        assert set(rep.errors) == {"lstm.Wx", "lstm.Wh", "lstm.b", "lstm.input"}

    def test_dense_weight_gradient_is_outer_product(self):
        d = _rng_layer(Dense("d", 3, 2, dtype=np.float64), 0)
        x = np.array([[1.0, 2.0, 3.0]])
        y, cache = d.forward(x)
        _, grads = d.backward(cache, np.array([[1.0, -1.0]]))
        np.testing.assert_allclose(grads["W"], np.outer(x[0], [1.0, -1.0]))

    def test_negative_control(self):
        lstm = _rng_layer(LSTM("lstm", 2, 3, dtype=np.float64), 1)
        x = np.random.default_rng(2).normal(size=(1, 5, 2))
        rep = check_layer(lstm, x, corrupt="Wh")
        assert not rep.passed
        assert rep.failing == ["lstm.Wh"]

    def test_non_finite_probe(self):
        params = {"w": np.array([1.0])}
        with pytest.raises(NumericError):
            finite_difference_check(lambda x: x * np.inf, params, np.ones(1),
                                    lambda x: (x, {"w": np.zeros(1)}))

    def test_relative_error(self):
        assert relative_error([1.0], [1.0]) == 0
        assert relative_error([2.0], [1.0]) == pytest.approx(0.5)
        assert relative_error([0.0], [1e-9]) == pytest.approx(1e-4)


def _adam_reference(p, grads, lr, b1, b2, eps):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        p = p - lr * mh / (math.sqrt(vh) + eps)
    return p


class TestAdam:
    def test_first_step_moves_by_lr(self):
        opt = Adam(lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8)
        p = {"w": np.array([1.0])}
        opt.step(p, {"w": np.array([0.5])})
        assert p["w"][0] == pytest.approx(1.0 - 2e-4, abs=1e-10)

    def test_second_step_matches_recurrence(self):
        opt = Adam(lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8)
        p = {"w": np.array([1.0])}
        opt.step(p, {"w": np.array([0.5])})
        opt.step(p, {"w": np.array([-0.25])})
        expected = _adam_reference(1.0, [0.5, -0.25], 2e-4, 0.5, 0.999, 1e-8)
        assert p["w"][0] == pytest.approx(expected, abs=1e-12)
        assert opt.t == 2

    @settings(max_examples=50, deadline=None)
    @given(grads=st.lists(st.floats(-10, 10), min_size=1, max_size=8),
           lr=st.floats(1e-5, 1e-1), b1=st.floats(0.0, 0.95), b2=st.floats(0.5, 0.9999))
    def test_matches_scalar_reference(self, grads, lr, b1, b2):
        opt = Adam(lr, b1, b2, 1e-8)
        p = {"w": np.array([0.3])}
        for g in grads:
            opt.step(p, {"w": np.array([g])})
        assert p["w"][0] == pytest.approx(_adam_reference(0.3, grads, lr, b1, b2, 1e-8), rel=1e-9, abs=1e-12)

    def test_zero_gradient_no_change(self):
        opt = Adam()
        p = {"w": np.array([1.5, -2.0])}
        for _ in range(3):
            opt.step(p, {"w": np.zeros(2)})
        assert p["w"].tolist() == [1.5, -2.0]

    def test_lr_zero_freezes_but_advances_moments(self):
        opt = Adam(lr=0.0)
        p = {"w": np.array([1.0])}
        opt.step(p, {"w": np.array([3.0])})
        assert p["w"][0] == 1.0
        assert opt.m["w"][0] == pytest.approx(1.5)
        assert opt.t == 1

    def test_shape_mismatch(self):
        opt = Adam()
        with pytest.raises(ShapeError, match="'w'"):
            opt.step({"w": np.zeros(3)}, {"w": np.zeros(4)})

    def test_missing_gradient(self):
        with pytest.raises(ShapeError):
            Adam().step({"w": np.zeros(3)}, {})


def test_lstm_zero_fixed_point():
    lstm = LSTM("l", 3, 5, dtype=np.float64)
    for v in lstm.params.values():
        v[...] = 0.0
    y, _ = lstm.forward(np.random.default_rng(0).normal(size=(2, 7, 3)))
    assert np.all(y == 0.0)


def test_quadratic_probe():
    w = {"w": np.array([3.0])}
    rep = finite_difference_check(lambda x: w["w"] ** 2, w, np.zeros(1),
                                  lambda x: (np.zeros(1), {"w": 2 * w["w"]}), check_input=False)
    assert rep.errors["w"] < 1e-9
