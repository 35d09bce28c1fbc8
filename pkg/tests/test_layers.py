import numpy as np
import pytest

from braincnn import layers as L
from braincnn.errors import ShapeError
from braincnn.optim import categorical_cross_entropy, finite_difference_gradient
from braincnn.rng import seeded_rng
from conftest import max_rel_err


class TestLeakyRelu:
    def test_elementwise(self):
        out = L.leaky_relu_forward(np.array([2.0, -2.0]), 0.01)
        assert np.allclose(out, [2.0, -0.02])

    def test_slope_one_identity(self):
        x = seeded_rng(0).standard_normal(100)
        assert np.array_equal(L.leaky_relu_forward(x, 1.0), x)

    def test_nonnegative_passthrough(self):
        x = seeded_rng(1).random(50)
        assert np.array_equal(L.leaky_relu_forward(x, 0.3), x)

    def test_backward_subgradient_at_zero(self):
        g = np.ones(3)
        out = L.leaky_relu_backward(g, np.array([-1.0, 0.0, 1.0]), 0.2)
        assert np.allclose(out, [0.2, 1.0, 1.0])


class TestBatchnorm:
    def test_normalizes(self):
        x = seeded_rng(2).random((2, 4, 4, 3)) * 5 + 2
        gamma, beta = np.ones(3), np.zeros(3)
        y, _ = L.batchnorm_forward(x, gamma, beta, np.zeros(3), np.ones(3), "train")
        assert np.allclose(y.mean(axis=(0, 1, 2)), 0, atol=1e-5)
        assert np.allclose(y.var(axis=(0, 1, 2)), 1, atol=1e-3)

    def test_constant_input_gives_beta(self):
        x = np.full((2, 3, 3, 2), 7.0)
        beta = np.array([0.5, -1.0])
        y, _ = L.batchnorm_forward(x, np.ones(2), beta, np.zeros(2), np.ones(2), "train")
        assert np.allclose(y, np.broadcast_to(beta, y.shape), atol=1e-6)

    def test_single_element_degenerate(self):
        with pytest.raises(ShapeError):
            L.batchnorm_forward(np.ones((1, 1, 1, 2)), np.ones(2), np.zeros(2),
                                np.zeros(2), np.ones(2), "train")

    def test_infer_is_frozen_affine(self):
        x = seeded_rng(3).random((2, 4, 4, 3))
        rm, rv = np.full(3, 0.4), np.full(3, 2.0)
        y1, _ = L.batchnorm_forward(x, np.ones(3), np.zeros(3), rm.copy(), rv.copy(), "infer")
        y2, _ = L.batchnorm_forward(x, np.ones(3), np.zeros(3), rm.copy(), rv.copy(), "infer")
        assert np.array_equal(y1, y2)

    def test_backward_finite_difference(self):
        rng = seeded_rng(4)
        x = rng.random((2, 4, 4, 3))
        gamma = rng.random(3) + 0.5
        beta = rng.standard_normal(3)
        grad_out = rng.standard_normal(x.shape)

        def run(xx, gg, bb):
            y, _ = L.batchnorm_forward(xx, gg, bb, np.zeros(3), np.ones(3), "train")
            return float((y * grad_out).sum())

        _, cache = L.batchnorm_forward(x, gamma, beta, np.zeros(3), np.ones(3), "train")
        dx, dgamma, dbeta = L.batchnorm_backward(grad_out, cache)
        params = {"x": x.copy(), "gamma": gamma.copy(), "beta": beta.copy()}
        fd = finite_difference_gradient(
            lambda p: run(p["x"], p["gamma"], p["beta"]), params, 1e-6)
        assert max_rel_err(dx, fd["x"]) < 1e-4
        assert max_rel_err(dgamma, fd["gamma"]) < 1e-4
        assert max_rel_err(dbeta, fd["beta"]) < 1e-4

    def test_running_stats_update(self):
        x = seeded_rng(5).random((4, 2, 2, 1)) + 3.0
        rm, rv = np.zeros(1), np.ones(1)
        L.batchnorm_forward(x, np.ones(1), np.zeros(1), rm, rv, "train", momentum=0.9)
        assert np.isclose(rm[0], 0.1 * x.mean())
        assert np.isclose(rv[0], 0.9 + 0.1 * x.var())


class TestDropout:
    def test_rate_zero(self):
        x = seeded_rng(6).random((3, 4))
        for mode in ("train", "infer"):
            y, _ = L.dropout_apply(x, 0.0, mode, seeded_rng(0))
            assert np.array_equal(y, x)

    def test_infer_passthrough(self):
        x = seeded_rng(7).random((3, 4))
        y, _ = L.dropout_apply(x, 0.7, "infer")
        assert np.array_equal(y, x)

    def test_mean_preserved(self):
        x = np.ones(10 ** 6)
        y, _ = L.dropout_apply(x, 0.5, "train", seeded_rng(8))
        assert 0.99 <= y.mean() <= 1.01

    def test_survivors_scaled(self):
        r = 0.25
        x = np.ones(10000)
        y, _ = L.dropout_apply(x, r, "train", seeded_rng(9))
        survivors = y[y != 0]
        assert np.allclose(survivors, 1.0 / (1.0 - r))
        # dropped fraction within 3 binomial standard deviations of r
        frac = 1.0 - survivors.size / x.size
        sd = np.sqrt(r * (1 - r) / x.size)
        assert abs(frac - r) <= 3 * sd


class TestDense:
    def test_identity_weights(self):
        x = seeded_rng(10).random((3, 4))
        assert np.array_equal(L.dense_forward(x, np.eye(4), np.zeros(4)), x)

    def test_zero_input_broadcasts_bias(self):
        b = np.array([1.0, 2.0])
        y = L.dense_forward(np.zeros((3, 5)), np.zeros((5, 2)), b)
        assert np.array_equal(y, np.tile(b, (3, 1)))

    def test_matches_matmul_oracle(self):
        from braincnn.tensor import matmul
        rng = seeded_rng(11)
        x, w = rng.random((3, 4)), rng.random((4, 2))
        assert np.array_equal(L.dense_forward(x, w, np.zeros(2)), matmul(x, w))


class TestSoftmax:
    def test_equal_logits(self):
        p = L.softmax(np.zeros((2, 4)))
        assert np.allclose(p, 0.25)

    def test_shift_invariance(self):
        z = seeded_rng(12).standard_normal((5, 4))
        assert np.allclose(L.softmax(z), L.softmax(z + 100.0), atol=1e-6)

    def test_closed_form(self):
        p = L.softmax(np.array([[0.0, np.log(3.0)]]))
        assert np.allclose(p, [[0.25, 0.75]], atol=1e-12)

    def test_rows_are_distributions(self):
        p = L.softmax(seeded_rng(13).standard_normal((20, 6)) * 10)
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-6)
        assert np.all((p > 0) & (p < 1))

    def test_argmax_matches_logits(self):
        z = seeded_rng(14).standard_normal((50, 5))
        assert np.array_equal(L.softmax(z).argmax(axis=1), z.argmax(axis=1))


class TestBuildCustomCnn:
    def test_default_filter_counts(self):
        model = L.build_custom_cnn()
        filters = [l.filters for l in model.layers if l.kind == "conv_block"]
        assert filters == [32, 64, 128, 256]

    def test_spatial_halving(self):
        model = L.build_custom_cnn()
        pool_shapes = [s for l, s in zip(model.layers, model.layer_shapes())
                       if l.kind == "maxpool"]
        assert [s[0] for s in pool_shapes] == [112, 56, 28, 14]

    def test_too_small_input_errors(self):
        with pytest.raises(ShapeError):
            L.build_custom_cnn(input_shape=(16, 16, 3),
                               filters=(4, 8, 16, 32, 64))  # 5 pool stages

    def test_deep_head_has_two_dropouts(self):
        model = L.build_custom_cnn(head="deep")
        rates = [l.rate for l in model.layers if l.kind == "dropout"]
        assert rates == [0.5, 0.25]

    def test_final_layer_softmax_width(self):
        model = L.build_custom_cnn(class_count=7)
        assert model.layers[-1].kind == "softmax"
        assert model.layer_shapes()[-1] == (7,)


def _tiny_model(dropout=0.0):
    return L.build_custom_cnn(input_shape=(8, 8, 1), class_count=4, filters=(4,),
                              dense_units=8, dropout_rate=dropout)


class TestForwardBackward:
    def test_untrained_probabilities_valid(self):
        model = _tiny_model()
        pset = L.init_parameters(model, seeded_rng(15))
        x = seeded_rng(16).random((3, 8, 8, 1)).astype(np.float32)
        p, _ = L.forward_pass(model, pset, x, "infer")
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-6)

    def test_infer_bit_identical(self):
        model = _tiny_model()
        pset = L.init_parameters(model, seeded_rng(17))
        x = seeded_rng(18).random((2, 8, 8, 1)).astype(np.float32)
        p1, _ = L.forward_pass(model, pset, x, "infer")
        p2, _ = L.forward_pass(model, pset, x, "infer")
        assert np.array_equal(p1, p2)

    def test_train_deterministic_under_seed(self):
        model = _tiny_model(dropout=0.5)
        x = seeded_rng(20).random((4, 8, 8, 1)).astype(np.float32)
        outs = []
        for _ in range(2):
            pset = L.init_parameters(model, seeded_rng(19))
            p, _ = L.forward_pass(model, pset, x, "train", seeded_rng(21))
            outs.append(p)
        assert np.array_equal(outs[0], outs[1])

    def test_shape_error_names_layer(self):
        model = _tiny_model()
        pset = L.init_parameters(model, seeded_rng(22))
        with pytest.raises(ShapeError, match="batch shape"):
            L.forward_pass(model, pset, np.ones((1, 9, 9, 1), np.float32))

    def test_zero_upstream_gives_zero_grads(self):
        model = _tiny_model()
        pset = L.init_parameters(model, seeded_rng(23), dtype=np.float64)
        x = seeded_rng(24).random((2, 8, 8, 1))
        _, caches = L.forward_pass(model, pset, x, "train", seeded_rng(0))
        grads = L.backward_pass(model, pset, caches, np.zeros((2, 4)))
        assert all(not g.any() for g in grads.values())

    def test_end_to_end_gradient_check(self):
        model = _tiny_model()
        pset = L.init_parameters(model, seeded_rng(25), dtype=np.float64)
        x = seeded_rng(26).random((2, 8, 8, 1))
        y = np.zeros((2, 4))
        y[0, 1] = y[1, 2] = 1
        frozen = {k: v.copy() for k, v in pset.buffers.items()}

        def loss_fn(_):
            for k in pset.buffers:
                pset.buffers[k][...] = frozen[k]
            p, _ = L.forward_pass(model, pset, x, "train")
            return categorical_cross_entropy(p, y)

        for k in pset.buffers:
            pset.buffers[k][...] = frozen[k]
        p, caches = L.forward_pass(model, pset, x, "train")
        grads = L.backward_pass(model, pset, caches, (p - y) / 2, from_logits=True)
        fd = finite_difference_gradient(loss_fn, pset.params, 1e-6)
        worst = max(max_rel_err(grads[k], fd[k]) for k in grads)
        assert worst < 1e-4

    def test_backward_through_softmax_matches_fused(self):
        # full-chain softmax Jacobian route equals the fused logits route
        model = _tiny_model()
        pset = L.init_parameters(model, seeded_rng(27), dtype=np.float64)
        x = seeded_rng(28).random((2, 8, 8, 1))
        y = np.zeros((2, 4))
        y[0, 0] = y[1, 3] = 1
        p, caches = L.forward_pass(model, pset, x, "train")
        grad_probs = -(y / np.clip(p, 1e-12, 1)) / 2
        g1 = L.backward_pass(model, pset, caches, grad_probs)
        g2 = L.backward_pass(model, pset, caches, (p - y) / 2, from_logits=True)
        for k in g1:
            assert np.allclose(g1[k], g2[k], atol=1e-10)


class TestInitParameters:
    def test_same_seed_identical(self):
        model = _tiny_model()
        a = L.init_parameters(model, seeded_rng(29))
        b = L.init_parameters(model, seeded_rng(29))
        for k in a.params:
            assert np.array_equal(a.params[k], b.params[k])

    def test_gamma_ones_buffers_fresh(self):
        model = _tiny_model()
        pset = L.init_parameters(model, seeded_rng(30))
        assert np.all(pset.params["0.gamma"] == 1)
        assert np.all(pset.params["0.beta"] == 0)
        assert np.all(pset.buffers["0.running_mean"] == 0)
        assert np.all(pset.buffers["0.running_var"] == 1)

    def test_fan_in_variance(self):
        model = L.build_custom_cnn(input_shape=(8, 8, 1), class_count=4,
                                   filters=(4,), dense_units=64)
        pset = L.init_parameters(model, seeded_rng(31))
        w = pset.params["3.weight"]  # flatten -> dense(64): 64 x 64 weights
        fan_in = w.shape[0]
        target = 2.0 / fan_in  # variance of U(-sqrt(6/fan_in), sqrt(6/fan_in))
        assert w.size >= 1000
        assert abs(w.var() - target) <= 0.2 * target
