import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from celleta.errors import ShapeMismatch, StaleCache, ValidationError
from celleta.models import top_k_mask
from celleta.neural import (
    AdamState, DenseNet, Layer, TrainConfig, adam_step, backward, backward_with_input, cross_entropy, evaluate_loss,
    finite_diff_check, fit, forward, net_from_record, net_to_record, sigmoid, softmax, squared_error,
)


def with_random_biases(net, seed):
    # zero biases can park a pre-activation exactly on the relu kink
    rng = np.random.default_rng(seed)
    for layer in net.layers:
        layer.b = rng.normal(scale=0.5, size=layer.b.shape)
    return net


def regression_net(seed=0):
    return with_random_biases(DenseNet.build([5, 7, 6, 4, 1], ["relu", "relu", "relu", "identity"], seed=seed), seed)


def shifted_inputs(n, width, seed):
    return np.random.default_rng(seed).normal(size=(n, width))


def assert_off_kinks(net, x, h=1e-5):
    _, cache = forward(net, x)
    for layer, z in zip(net.layers, cache.pre):
        if layer.activation == "relu":
            assert np.abs(z).min() > 10 * h


class TestGradients:
    def test_relu_regression(self):
        net = regression_net()
        x = shifted_inputs(6, 5, 1)
        y = np.random.default_rng(2).normal(size=(6, 1))
        assert_off_kinks(net, x)
        err = finite_diff_check(net, x, lambda out: squared_error(out, y))
        assert err < 1e-4

    def test_softmax_classifier(self):
        net = with_random_biases(DenseNet.build([5, 8, 4], ["relu", "softmax"], seed=3), 3)
        x = shifted_inputs(7, 5, 4)
        assert_off_kinks(net, x)
        labels = np.array([0, 1, 2, 3, 1, 2, 0])
        assert finite_diff_check(net, x, lambda out: cross_entropy(out, labels), wrt_logits=True) < 1e-4

    def test_softmax_layer_full_jacobian(self):
        """The generic softmax backward path (not the logits shortcut)."""
        net = DenseNet.build([3, 4], ["softmax"], seed=5)
        x = shifted_inputs(4, 3, 6)
        target = np.random.default_rng(7).dirichlet(np.ones(4), size=4)
        assert finite_diff_check(net, x, lambda out: squared_error(out, target)) < 1e-4

    def test_sigmoid_stack(self):
        net = DenseNet.build([6, 5, 3], ["sigmoid", "sigmoid"], seed=8)
        x = np.random.default_rng(9).uniform(size=(5, 6))
        y = np.random.default_rng(10).uniform(size=(5, 3))
        assert finite_diff_check(net, x, lambda out: squared_error(out, y)) < 1e-4

    def test_input_gradient(self):
        net = regression_net(11)
        x = shifted_inputs(3, 5, 12)
        assert_off_kinks(net, x, 1e-6)
        y = np.zeros((3, 1))
        out, cache = forward(net, x)
        _, dx = backward_with_input(net, cache, squared_error(out, y)[1])
        h = 1e-6
        num = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            xp, xm = x.copy(), x.copy()
            xp[idx] += h
            xm[idx] -= h
            num[idx] = (squared_error(forward(net, xp)[0], y)[0] - squared_error(forward(net, xm)[0], y)[0]) / (2 * h)
        assert np.allclose(dx, num, rtol=1e-5, atol=1e-8)

    def test_stale_cache(self):
        net = regression_net()
        x = shifted_inputs(2, 5, 0)
        out, cache = forward(net, x)
        adam_step(net, backward(net, cache, np.ones_like(out)), AdamState())
        with pytest.raises(StaleCache):
            backward(net, cache, np.ones_like(out))

    def test_frozen_layers_get_no_gradient(self):
        net = regression_net()
        net.freeze([0, 1, 2])
        out, cache = forward(net, shifted_inputs(2, 5, 0))
        assert set(backward(net, cache, np.ones_like(out))) == {3}


class TestLosses:
    def test_squared_error_value(self):
        loss, g = squared_error(np.array([[1.0, 2.0], [3.0, 5.0]]), np.array([[0.0, 0.0], [3.0, 4.0]]))
        assert loss == (1 + 4 + 0 + 1) / 2
        assert np.array_equal(g, np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_masked(self):
        loss, g = squared_error(np.array([[1.0, 9.0]]), np.zeros((1, 2)), mask=np.array([[1.0, 0.0]]))
        assert loss == 1.0 and g[0, 1] == 0.0

    def test_cross_entropy_value(self):
        p = np.array([[0.7, 0.2, 0.1], [0.1, 0.1, 0.8]])
        loss, _ = cross_entropy(p, [0, 2])
        assert loss == pytest.approx(-(np.log(0.7) + np.log(0.8)) / 2, rel=1e-14)

    def test_shape_errors(self):
        with pytest.raises(ShapeMismatch):
            squared_error(np.zeros((2, 1)), np.zeros((3, 1)))
        with pytest.raises(ShapeMismatch):
            cross_entropy(np.full((1, 3), 1 / 3), [3])


class TestSoftmax:
    def test_laws_exhaustive(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            z = rng.normal(scale=5, size=10)
            p = softmax(z)
            assert abs(p.sum() - 1) < 1e-12
            assert np.allclose(softmax(z + rng.normal(scale=50)), p, rtol=1e-12, atol=1e-15)
            assert np.argmax(top_k_mask(p, 5)) == np.argmax(p)

    def test_extreme_logits(self):
        p = softmax(np.array([1000.0, 0.0, -1000.0]))
        assert np.isfinite(p).all() and p[0] == pytest.approx(1.0)

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, 6, elements=st.floats(-700, 700)))
    def test_sigmoid_bounds(self, z):
        s = sigmoid(z)
        assert np.all((s >= 0) & (s <= 1))
        assert np.allclose(s + sigmoid(-z), 1.0)


class TestAdam:
    def test_first_step_matches_hand_computation(self):
        W = np.array([[0.5]])
        net = DenseNet([Layer(W.copy(), np.zeros(1), "identity")])
        g = np.array([[0.2]])
        state = AdamState(lr=0.1)
        adam_step(net, {0: (g, np.zeros(1))}, state)
        m = 0.1 * 0.2 / (1 - 0.9)
        v = 0.001 * 0.04 / (1 - 0.999)
        assert net.layers[0].W[0, 0] == pytest.approx(0.5 - 0.1 * m / (np.sqrt(v) + 1e-8), rel=1e-12)

    def test_second_step(self):
        net = DenseNet([Layer(np.array([[0.0]]), np.zeros(1), "identity")])
        state = AdamState(lr=0.01)
        grads = [0.3, -0.1]
        m = v = 0.0
        w = 0.0
        for t, gv in enumerate(grads, 1):
            adam_step(net, {0: (np.array([[gv]]), np.zeros(1))}, state)
            m = 0.9 * m + 0.1 * gv
            v = 0.999 * v + 0.001 * gv * gv
            w -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert net.layers[0].W[0, 0] == pytest.approx(w, rel=1e-12)

    def test_frozen_untouched(self):
        net = regression_net()
        net.freeze([0])
        before = net.param_bytes([0])
        grads = {i: (np.ones_like(l.W), np.ones_like(l.b)) for i, l in enumerate(net.layers)}
        adam_step(net, grads, AdamState())
        assert net.param_bytes([0]) == before


class TestDropout:
    def test_eval_mode_is_deterministic(self):
        net = DenseNet.build([4, 16, 1], ["relu", "identity"], dropout=0.5, seed=1)
        x = shifted_inputs(3, 4, 0)
        assert np.array_equal(forward(net, x)[0], forward(net, x)[0])

    def test_inverted_scaling_preserves_mean(self):
        layer = Layer(np.eye(50), np.zeros(50), "identity", dropout=0.3)
        net = DenseNet([layer, Layer(np.ones((50, 1)) / 50, np.zeros(1), "identity")])
        x = np.ones((4000, 50))
        out, _ = forward(net, x, train_mode=True, rng=np.random.default_rng(0))
        assert out.mean() == pytest.approx(1.0, abs=0.01)

    def test_bad_dropout(self):
        with pytest.raises(ValidationError):
            DenseNet([Layer(np.eye(2), np.zeros(2), "relu", dropout=1.0)])


class TestFit:
    def test_learns_linear_map(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(400, 3))
        Y = X @ np.array([[1.0], [-2.0], [0.5]]) + 0.3
        net = DenseNet.build([3, 1], ["identity"], seed=0)
        hist = fit(net, X, Y, TrainConfig(epochs=200, batch_size=32, lr=0.05, dropout=0.0, patience=200))
        assert hist.train_loss[-1] < 1e-4 < hist.train_loss[0]
        assert np.allclose(net.layers[0].W[:, 0], [1.0, -2.0, 0.5], atol=0.02)

    def test_restores_best_validation_params(self):
        rng = np.random.default_rng(1)
        X, Y = rng.normal(size=(64, 4)), rng.normal(size=(64, 1))
        Xv, Yv = rng.normal(size=(32, 4)), rng.normal(size=(32, 1))
        net = DenseNet.build([4, 32, 1], ["relu", "identity"], seed=2)
        hist = fit(net, X, Y, TrainConfig(epochs=40, lr=0.01, dropout=0.0, patience=40), X_val=Xv, Y_val=Yv)
        assert evaluate_loss(net, Xv, Yv) == pytest.approx(hist.best_val, rel=1e-12)
        assert hist.best_val == min(hist.val_loss)

    def test_min_delta_ignores_tiny_gains(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(200, 2))
        Y = X[:, :1] * 2.0
        plain = fit(DenseNet.build([2, 1], ["identity"], seed=4), X, Y,
                    TrainConfig(epochs=60, lr=0.05, dropout=0.0, patience=60))
        coarse = fit(DenseNet.build([2, 1], ["identity"], seed=4), X, Y,
                     TrainConfig(epochs=60, lr=0.05, dropout=0.0, patience=60, min_delta=0.5))
        assert coarse.best_epoch <= plain.best_epoch

    def test_same_seed_same_result(self):
        X = np.random.default_rng(0).normal(size=(50, 3))
        Y = X.sum(axis=1, keepdims=True)
        a, b = (DenseNet.build([3, 8, 1], ["relu", "identity"], dropout=0.1, seed=5) for _ in range(2))
        for net in (a, b):
            fit(net, X, Y, TrainConfig(epochs=5, seed=9))
        assert a.param_bytes() == b.param_bytes()

    def test_bad_config(self):
        with pytest.raises(ValidationError):
            TrainConfig(batch_size=0)


def test_record_round_trip():
    net = regression_net(3)
    net.freeze([0])
    meta, arrays = net_to_record(net, "n")
    back = net_from_record(meta, arrays, "n")
    assert back.param_bytes() == net.param_bytes()
    assert [l.frozen for l in back.layers] == [l.frozen for l in net.layers]
