import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from aisf.data import REGIMES
from aisf.models import (
    KINDS,
    PARAMETRIC,
    BlockConfig,
    ChainFitError,
    ChainModel,
    ForecastNet,
    build_model,
    chain_fit,
    chain_predict,
    forward_control,
)
from aisf.tensor import Rng, ShapeError, Tensor

SMALL = BlockConfig(conv_out_channels=8, hidden_size=6)


def rand_x(B, w, m, seed=0):
    return Tensor(Rng(seed).uniform(0, 1, (B, w, m)))


class TestShapes:
    @pytest.mark.parametrize("kind", KINDS)
    @pytest.mark.parametrize("regime", sorted(REGIMES))
    def test_every_kind_every_regime(self, kind, regime):
        w, s = REGIMES[regime]
        model = build_model(kind, w, s, 5, SMALL, Rng(0))
        if kind == "chain":
            X = Rng(1).normal(0, 1, (40, w, 5))
            Y = Rng(2).normal(0, 1, (40, s, 5))
            model.fit(X, Y)
        assert model(rand_x(2, w, 5), "eval").shape == (2, s, 5)

    def test_proposed_low_regime_default_config(self):
        net = build_model("proposed", 15, 5, 5, BlockConfig(), Rng(0))
        assert net(rand_x(2, 15, 5)).shape == (2, 5, 5)

    def test_wrong_input_shape(self):
        net = build_model("proposed", 15, 5, 5, SMALL, Rng(0))
        with pytest.raises(ShapeError):
            net(rand_x(2, 30, 5))

    def test_bad_mode(self):
        net = build_model("lstm", 4, 2, 5, SMALL, Rng(0))
        with pytest.raises(ValueError):
            net(rand_x(1, 4, 5), "predict")

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            build_model("transformer", 4, 2, 5)

    def test_block_dimensions(self):
        net = ForecastNet(15, 25, 5, BlockConfig(conv_out_channels=16, hidden_size=32))
        assert net.alpha_conv.W.shape == (16, 15, 3)
        assert net.omega_conv.W.shape == (16, 5, 3)
        assert net.alpha_dec.W.shape == (15, 32)
        assert net.omega_dec.W.shape == (125, 32)
        assert net.ar.W.shape == (125, 75)

    def test_isolate_variables_uses_pointwise_kernel(self):
        net = ForecastNet(6, 2, 5, BlockConfig(conv_out_channels=4, hidden_size=4, isolate_variables=True))
        assert net.alpha_conv.W.shape == (4, 6, 1)

    def test_eval_is_deterministic_train_is_not(self):
        net = build_model("proposed", 6, 2, 5, SMALL, Rng(0))
        x = rand_x(3, 6, 5)
        np.testing.assert_array_equal(net(x, "eval").data, net(x, "eval").data)
        a = net(x, "train", Rng(1)).data
        b = net(x, "train", Rng(2)).data
        assert not np.array_equal(a, b)


class TestComposition:
    def test_zero_omega_decoder_and_ar_gives_zero(self):
        net = build_model("proposed", 6, 3, 5, SMALL, Rng(0))
        for p in (net.omega_dec.W, net.omega_dec.b, net.ar.W, net.ar.b):
            p.data = np.zeros(p.shape)
        assert np.all(net(rand_x(2, 6, 5)).data == 0)

    def test_ar_isolation_identity_shortcut(self):
        w = s = 4
        net = build_model("proposed", w, s, 5, SMALL, Rng(0))
        for p in (net.alpha_dec.W, net.omega_dec.W, net.omega_dec.b):
            p.data = np.zeros(p.shape)
        net.ar.W.data = np.eye(w * 5)
        net.ar.b.data = np.zeros(w * 5)
        x = rand_x(3, w, 5)
        np.testing.assert_array_equal(net(x).data, x.data)

    @given(st.integers(1, 4), st.integers(0, 2**31))
    def test_ar_isolation_matches_linear_map(self, B, seed):
        net = build_model("proposed", 5, 3, 5, SMALL, Rng(seed))
        for p in (net.alpha_dec.W, net.omega_dec.W, net.omega_dec.b):
            p.data = np.zeros(p.shape)
        x = rand_x(B, 5, 5, seed)
        ref = net.ar(Tensor(x.data.reshape(B, -1))).data.reshape(B, 3, 5)
        np.testing.assert_array_equal(net(x).data, ref)
        np.testing.assert_allclose(ref, (x.data.reshape(B, -1) @ net.ar.W.data.T + net.ar.b.data).reshape(B, 3, 5),
                                   rtol=1e-13, atol=1e-15)

    @pytest.mark.parametrize("kind", ["feed_forward", "elman", "gru", "lstm", "fc_cnn"])
    def test_zero_final_layer_gives_zero(self, kind):
        model = build_model(kind, 30, 50, 5, SMALL, Rng(0))
        head = model.fc2 if kind == "feed_forward" else model.head
        head.W.data = np.zeros(head.W.shape)
        head.b.data = np.zeros(head.b.shape)
        assert np.all(model(rand_x(2, 30, 5)).data == 0)


class TestControl:
    def test_window_mean(self):
        x = np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1)
        np.testing.assert_array_equal(forward_control(x, 2).ravel(), [2.0, 2.0])

    def test_shape_medium(self):
        assert forward_control(np.zeros((1, 15, 5)), 25).shape == (1, 25, 5)

    @given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 20), st.integers(1, 5)),
                  elements=st.floats(-1e6, 1e6)), st.integers(1, 8))
    def test_brute_force_oracle(self, x, s):
        out = forward_control(x, s)
        B, w, m = x.shape
        for b in range(B):
            for v in range(m):
                ref = sum(x[b, i, v] for i in range(w)) / w
                for t in range(s):
                    assert abs(out[b, t, v] - ref) <= 1e-12 * max(1.0, abs(ref))

    @given(st.floats(-1e3, 1e3), st.integers(1, 10))
    def test_constant_window(self, c, s):
        np.testing.assert_allclose(forward_control(np.full((1, 7, 5), c), s), c, rtol=1e-15, atol=0)


def line_data(w, s, n, seed):
    r = Rng(seed)
    a = r.uniform(-2, 2, (n, 1, 5))
    b = r.uniform(-5, 5, (n, 1, 5))
    t = np.arange(w + s, dtype=float).reshape(1, -1, 1) + r.uniform(0, 10, (n, 1, 1))
    seq = a * t + b
    return seq[:, :w], seq[:, w:]


class TestChain:
    @given(st.integers(2, 8), st.integers(1, 6), st.integers(0, 2**31))
    def test_linear_series_exact_continuation(self, w, s, seed):
        X, Y = line_data(w, s, 60, seed)
        model = chain_fit(X, Y, s)
        Xt, Yt = line_data(w, s, 10, seed + 1)
        np.testing.assert_allclose(model.predict(Xt), Yt, atol=1e-6)

    def test_s1_is_plain_regression(self):
        X = Rng(3).normal(0, 1, (40, 5, 5))
        Y = Rng(4).normal(0, 1, (40, 1, 5))
        model = chain_fit(X, Y, 1)
        for v in range(5):
            A = np.hstack([X[:, :, v], np.ones((40, 1))])
            coef = np.linalg.lstsq(A, Y[:, 0, v], rcond=None)[0]
            np.testing.assert_allclose(model.coefficients[v][0], coef, atol=1e-6)

    def test_constant_series(self):
        c = Rng(0).uniform(-5, 5, (20, 1, 5))
        X = np.repeat(c, 4, axis=1)
        Y = np.repeat(c, 3, axis=1)
        out = chain_predict(chain_fit(X, Y, 3), np.full((4, 5), 3.0))
        np.testing.assert_allclose(out, np.full((3, 5), 3.0), atol=1e-6)

    def test_singular_system_reports_condition(self):
        X = np.zeros((10, 3, 5))
        X[:, 0] = 1e150
        with pytest.raises(ChainFitError, match="condition number"):
            chain_fit(X, np.zeros((10, 2, 5)), 2)

    def test_predict_before_fit(self):
        with pytest.raises(Exception):
            ChainModel(3, 2, 5).predict(np.zeros((1, 3, 5)))


def test_parametric_kinds_have_parameters():
    for kind in PARAMETRIC:
        assert build_model(kind, 4, 2, 5, SMALL, Rng(0)).num_parameters() > 0
