import numpy as np
import pytest
from hypothesis import given, strategies as st

from atom_ood import nn_model as nm

from oracles import numeric_grad


def rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-8))


def random_case(seed, activation="relu"):
    g = np.random.default_rng(seed)
    d, k = int(g.integers(1, 5)), int(g.integers(1, 4))
    hidden = tuple(int(h) for h in g.integers(2, 6, size=g.integers(1, 3)))
    model = nm.init_mlp((d, *hidden, k + 1), activation, seed)
    # nonzero biases keep ReLU pre-activations off the kink at exactly 0,
    # where a central difference straddles two slopes
    for b in model.biases:
        b[:] = g.normal(size=b.shape)
    n = int(g.integers(1, 7))
    x = g.normal(size=(n, d))
    y = g.integers(1, k + 2, size=n)
    return model, x, y


def param_grad_errors(model, x, y):
    grads = nm.loss_grad(model, x, y)
    errs = []
    for which in ("weights", "biases"):
        for i, analytic in enumerate(getattr(grads, which)):
            def f(v, i=i, which=which):
                m = model.copy()
                getattr(m, which)[i] = v
                return nm.loss_grad(m, x, y).loss
            errs.append(rel_err(analytic, numeric_grad(f, getattr(model, which)[i])))
    return errs


class TestForward:
    def test_shapes_and_probabilities(self):
        m = nm.init_mlp((3, 8, 4), "relu", 0)
        p = nm.forward_softmax(m, np.ones((5, 3)))
        assert p.shape == (5, 4)
        np.testing.assert_allclose(p.sum(axis=1), 1.0)
        assert nm.forward_softmax(m, np.ones(3)).shape == (4,)
        assert m.num_classes == 3 and m.input_dim == 3

    def test_softmax_stable_for_huge_logits(self):
        p = nm.softmax(np.array([[1e4, 0.0, -1e4]]))
        np.testing.assert_allclose(p, [[1.0, 0.0, 0.0]])
        assert np.all(np.isfinite(nm.log_softmax(np.array([[1e4, -1e4]]))))

    def test_chunked_inference_matches_single_pass(self):
        m = nm.init_mlp((2, 16, 3), "tanh", 1)
        x = np.random.default_rng(0).normal(size=(nm.INFER_CHUNK * 2 + 7, 2))
        big = nm.logits(m, x)
        parts = np.concatenate([nm.logits(m, x[i:i + 100]) for i in range(0, len(x), 100)])
        np.testing.assert_allclose(big, parts, rtol=1e-12, atol=1e-12)

    def test_rejects_bad_input(self):
        m = nm.init_mlp((3, 4, 2), "relu", 0)
        with pytest.raises(ValueError, match="width"):
            nm.forward_softmax(m, np.ones((2, 4)))
        with pytest.raises(ValueError, match="non-finite"):
            nm.forward_softmax(m, np.array([[np.nan, 0, 0]]))

    def test_model_validation(self):
        with pytest.raises(ValueError):
            nm.MlpModel((3, 1), [np.zeros((3, 1))], [np.zeros(1)])
        with pytest.raises(ValueError):
            nm.MlpModel((3, 2), [np.zeros((2, 3))], [np.zeros(2)])
        with pytest.raises(ValueError):
            nm.init_mlp((3, 2), "sigmoid", 0)

    def test_ood_score_and_predict(self):
        m = nm.zero_mlp((2, 3))
        m.biases[0][:] = [1.0, 2.0, 0.0]
        np.testing.assert_allclose(nm.ood_score(m, np.zeros(2)), np.exp(0) / (np.e + np.e ** 2 + 1))
        assert nm.predict_label(m, np.zeros(2)) == 2

    def test_init_is_he_scaled(self):
        m = nm.init_mlp((400, 300, 3), "relu", 2)
        assert m.weights[0].std() == pytest.approx(np.sqrt(2 / 400), rel=0.02)
        np.testing.assert_array_equal(m.biases[0], 0.0)


class TestGradients:
    @pytest.mark.parametrize("activation", ["relu", "tanh"])
    @pytest.mark.parametrize("seed", range(10))
    def test_param_grads_match_finite_differences(self, activation, seed):
        model, x, y = random_case(seed, activation)
        assert max(param_grad_errors(model, x, y)) < 1e-4

    @pytest.mark.parametrize("activation", ["relu", "tanh"])
    @pytest.mark.parametrize("seed", range(10))
    def test_input_grads_match_finite_differences(self, activation, seed):
        model, x, y = random_case(100 + seed, activation)
        dx = nm.grad_wrt_input(model, x, y)
        # per-row CE summed over rows separates, so one FD pass checks every row
        fd = numeric_grad(lambda v: nm.loss_grad(model, v, y).loss * len(v), x)
        assert rel_err(dx, fd) < 1e-4

    def test_weighted_loss(self):
        model, x, y = random_case(3)
        w = np.linspace(0.1, 1.0, len(x))
        g = nm.loss_grad(model, x, y, weights=w)
        per = [nm.loss_grad(model, x[i:i + 1], y[i:i + 1]).loss for i in range(len(x))]
        assert g.loss == pytest.approx(float(np.dot(per, w)))

    def test_floor_caps_loss_but_not_gradient(self):
        m = nm.zero_mlp((1, 2))
        m.biases[1 - 1][:] = [200.0, 0.0]
        g = nm.loss_grad(m, np.zeros((1, 1)), [2])
        assert g.loss == 50.0
        np.testing.assert_allclose(g.biases[0], [1.0, -1.0])

    def test_label_checks(self):
        m = nm.init_mlp((2, 3), "relu", 0)
        with pytest.raises(ValueError):
            nm.loss_grad(m, np.zeros((2, 2)), [0, 1])
        with pytest.raises(ValueError):
            nm.loss_grad(m, np.zeros((2, 2)), [1, 4])
        with pytest.raises(ValueError):
            nm.loss_grad(m, np.zeros((3, 2)), [1, 2])
        # a scalar label broadcasts
        assert nm.grad_wrt_input(m, np.zeros((3, 2)), 3).shape == (3, 2)


class TestSgd:
    def test_nesterov_update(self):
        m = nm.zero_mlp((1, 2))
        m.weights[0][:] = 1.0
        g = nm.GradBundle(0.0, [np.full((1, 2), 0.5)], [np.zeros(2)])
        vel = [np.full((1, 2), 0.2), np.zeros(2)]
        new, v = nm.sgd_step(m, g, lr=0.1, momentum=0.9, weight_decay=0.01, velocity=vel)
        gg = 0.5 + 0.01 * 1.0
        vv = 0.9 * 0.2 + gg
        np.testing.assert_allclose(v[0], vv)
        np.testing.assert_allclose(new.weights[0], 1.0 - 0.1 * (gg + 0.9 * vv))
        # the input model is untouched
        np.testing.assert_array_equal(m.weights[0], 1.0)

    def test_heavy_ball(self):
        m = nm.zero_mlp((1, 2))
        g = nm.GradBundle(0.0, [np.ones((1, 2))], [np.ones(2)])
        new, v = nm.sgd_step(m, g, 0.5, 0.9, nesterov=False)
        np.testing.assert_allclose(new.biases[0], -0.5)

    @pytest.mark.parametrize("kw", [dict(lr=0.0), dict(lr=0.1, momentum=1.0),
                                    dict(lr=0.1, weight_decay=-1.0)])
    def test_rejects_bad_hyperparameters(self, kw):
        m = nm.zero_mlp((1, 2))
        g = nm.GradBundle(0.0, [np.zeros((1, 2))], [np.zeros(2)])
        with pytest.raises(ValueError):
            nm.sgd_step(m, g, **kw)

    def test_rejects_shape_mismatch(self):
        m = nm.zero_mlp((1, 2))
        g = nm.GradBundle(0.0, [np.zeros((2, 2))], [np.zeros(2)])
        with pytest.raises(ValueError):
            nm.sgd_step(m, g, 0.1)

    def test_descent_reduces_loss(self):
        model, x, y = random_case(7, "tanh")
        before = nm.loss_grad(model, x, y)
        after, _ = nm.sgd_step(model, before, 1e-3, momentum=0.0)
        assert nm.loss_grad(after, x, y).loss < before.loss


class TestCheckpoint:
    @given(st.integers(0, 1000), st.booleans())
    def test_round_trip_bitwise(self, seed, with_vel):
        import tempfile, os
        model, x, _ = random_case(seed, "tanh")
        vel = [np.full_like(p, 0.3) for p in model.params()] if with_vel else None
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "m.json")
            nm.save_checkpoint(model, path, velocity=vel, meta={"k": 1})
            back, v2 = nm.load_checkpoint(path, with_velocity=True)
            assert nm.checkpoint_meta(path) == {"k": 1}
        for a, b in zip(model.params(), back.params()):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(nm.logits(model, x), nm.logits(back, x))
        assert (v2 is None) == (not with_vel)
