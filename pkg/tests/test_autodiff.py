import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wgad import autodiff as ad
from wgad.nn import NetworkSpec, forward_tape, init_params, tape_params


def _mlp_loss(spec, x):
    def fn(tape, params):
        out = forward_tape(spec, params, ad.Tensor(x), mode="train")
        return (out * out).mean()
    return fn


class TestBasics:
    def test_square(self):
        tape = ad.Tape()
        w = tape.param("w", np.array(3.0))
        assert ad.backward(tape, w * w)["w"] == pytest.approx(6.0)

    def test_unused_param_gets_exact_zero(self):
        tape = ad.Tape()
        a = tape.param("a", np.ones(3))
        b = tape.param("b", np.full((2, 2), 5.0))
        g = ad.backward(tape, (a * 2.0).sum())
        assert np.array_equal(g["b"], np.zeros((2, 2)))
        assert np.array_equal(g["a"], np.full(3, 2.0))

    def test_duplicate_param_rejected(self):
        tape = ad.Tape()
        tape.param("w", np.zeros(2))
        with pytest.raises(ValueError, match="duplicate"):
            tape.param("w", np.zeros(2))

    def test_non_finite_leaf(self):
        with pytest.raises(ad.NonFiniteError):
            ad.Tape().param("w", np.array([1.0, np.nan]))

    def test_non_finite_result(self):
        tape = ad.Tape()
        w = tape.param("w", np.array([0.0]))
        with np.errstate(divide="ignore"), pytest.raises(ad.NonFiniteError):
            ad.log(w)

    def test_step_has_no_derivative(self):
        tape = ad.Tape()
        w = tape.param("w", np.array([0.5, -0.5]))
        out = ad.step(w).sum()
        with pytest.raises(ad.NoDerivativeError):
            ad.backward(tape, out)

    def test_mixed_tapes_rejected(self):
        a = ad.Tape().param("a", np.ones(2))
        b = ad.Tape().param("b", np.ones(2))
        with pytest.raises(ValueError, match="different tapes"):
            a + b

    def test_paused_records_nothing(self):
        tape = ad.Tape()
        w = tape.param("w", np.ones(4))
        before = len(tape)
        with tape.paused():
            (w * w).sum()
        assert len(tape) == before

    def test_replay_is_exact(self, rng):
        spec = NetworkSpec.mlp([3, 5, 1], hidden="tanh")
        tape = ad.Tape()
        leaves = tape_params(tape, init_params(spec, 0))
        forward_tape(spec, leaves, ad.Tensor(rng.normal(size=(4, 3))))
        assert tape.replay() == 0.0

    def test_broadcast_gradient_is_summed(self):
        tape = ad.Tape()
        b = tape.param("b", np.zeros(3))
        x = ad.Tensor(np.ones((5, 3)))
        g = ad.backward(tape, (x + b).sum())
        assert np.array_equal(g["b"], np.full(3, 5.0))


class TestLinearity:
    @given(st.floats(-3, 3), st.floats(-3, 3))
    @settings(max_examples=30, deadline=None)
    def test_gradient_of_combination(self, a, b):
        x0 = np.array([0.3, -1.2, 2.0])

        def grad(fn):
            tape = ad.Tape()
            w = tape.param("w", x0)
            return ad.backward(tape, fn(w))["w"]

        f = lambda w: ad.tanh(w).sum()
        g = lambda w: (w * w * w).sum()
        combined = grad(lambda w: f(w) * a + g(w) * b)
        assert np.allclose(combined, a * grad(f) + b * grad(g), rtol=1e-12, atol=1e-12)


class TestFiniteDifferences:
    @pytest.mark.parametrize("hidden", ["tanh", "sigmoid", "leaky_relu", "identity"])
    def test_mlp_parameter_gradients(self, hidden, rng):
        spec = NetworkSpec.mlp([3, 6, 4, 2], hidden=hidden, output="sigmoid")
        x = rng.normal(size=(7, 3))
        point = dict(init_params(spec, 1).items())
        assert ad.finite_diff_check(_mlp_loss(spec, x), point) < 1e-6

    def test_batch_norm_gradients(self, rng):
        spec = NetworkSpec.mlp([3, 5, 2], hidden="tanh", bn_hidden=True)
        x = rng.normal(size=(6, 3))
        store = init_params(spec, 2)
        point = {k: store[k] for k in store.trainable if k != "layer0.bias"}
        point["layer0.bn_scale"] = rng.uniform(0.5, 1.5, 5)
        fn = _mlp_loss(spec, x)
        bias = store["layer0.bias"]
        assert ad.finite_diff_check(lambda tape, p: fn(tape, {**p, "layer0.bias": ad.Tensor(bias)}), point) < 1e-6

    def test_bias_before_batch_norm_has_zero_gradient(self, rng):
        # normalization removes any constant shift of the pre-activation
        spec = NetworkSpec.mlp([3, 5, 2], hidden="tanh", bn_hidden=True)
        store = init_params(spec, 2)
        tape = ad.Tape()
        leaves = {k: tape.param(k, store[k]) for k in store.trainable}
        g = ad.backward(tape, _mlp_loss(spec, rng.normal(size=(6, 3)))(tape, leaves))
        assert np.abs(g["layer0.bias"]).max() < 1e-14

    @pytest.mark.parametrize("name,fn,lo,hi", [
        ("exp", ad.exp, -2, 2),
        ("log", ad.log, 0.2, 3),
        ("sqrt", ad.sqrt, 0.2, 3),
        ("softplus", ad.softplus, -4, 4),
        ("abs", ad.absolute, 0.1, 3),
        ("pow", lambda w: w ** 3, -2, 2),
        ("div", lambda w: 1.0 / (w + 4.0), -2, 2),
    ])
    def test_elementwise_ops(self, name, fn, lo, hi, rng):
        point = {"w": rng.uniform(lo, hi, 5)}
        assert ad.finite_diff_check(lambda tape, p: fn(p["w"]).sum(), point) < 1e-6

    def test_detects_wrong_gradient(self, rng):
        point = {"w": rng.normal(size=3)}
        wrong = {"w": 2 * point["w"] + 0.1}
        err = ad.finite_diff_check(lambda tape, p: (p["w"] * p["w"]).sum(), point, analytic=wrong)
        assert err > 1e-3

    def test_rejects_bad_step(self):
        with pytest.raises(ValueError):
            ad.finite_diff_check(lambda tape, p: p["w"].sum(), {"w": np.ones(2)}, step=0)


class TestDoubleBackprop:
    def test_input_gradient_of_quadratic(self):
        tape = ad.Tape()
        w = tape.param("w", np.array([2.0, -1.0]))
        x = tape.input(np.array([[1.0, 3.0]]))
        y = (x * x * w).sum()
        gx = ad.input_gradient(tape, y, x)
        assert np.allclose(gx.data, [[4.0, -6.0]])
        # d/dw of sum((2 w x)^2) = 8 w x^2
        g = ad.backward(tape, (gx * gx).sum())
        assert np.allclose(g["w"], [16.0, -72.0])

    def test_input_must_be_input_leaf(self):
        tape = ad.Tape()
        w = tape.param("w", np.ones(2))
        with pytest.raises(ValueError):
            ad.input_gradient(tape, w.sum(), w)

    def test_unconnected_input_gives_zeros(self):
        tape = ad.Tape()
        w = tape.param("w", np.ones(2))
        x = tape.input(np.ones((3, 2)))
        assert np.array_equal(ad.input_gradient(tape, w.sum(), x).data, np.zeros((3, 2)))

    @pytest.mark.parametrize("hidden", ["tanh", "sigmoid", "leaky_relu"])
    def test_penalty_gradient_matches_fd(self, hidden, rng):
        spec = NetworkSpec.mlp([2, 6, 5, 1], hidden=hidden)
        pts = rng.normal(size=(5, 2))

        def penalty(tape, params):
            x = tape.input(pts)
            out = forward_tape(spec, params, x)
            g = ad.input_gradient(tape, out.sum(), x)
            norms = ad.sqrt((g * g).sum(axis=1) + 1e-12)
            return ((norms - 1.0) ** 2).mean()

        assert ad.finite_diff_check(penalty, dict(init_params(spec, 5).items()), step=1e-5) < 1e-4

    def test_matches_torch(self, rng):
        torch = pytest.importorskip("torch")
        spec = NetworkSpec.mlp([2, 4, 1], hidden="tanh")
        params = init_params(spec, 9)
        pts = rng.normal(size=(3, 2))

        tape = ad.Tape()
        leaves = tape_params(tape, params)
        x = tape.input(pts)
        g = ad.input_gradient(tape, forward_tape(spec, leaves, x).sum(), x)
        ours = ad.backward(tape, (g * g).sum())

        W0, b0, W1, b1 = (torch.tensor(params[k], requires_grad=True) for k in
                          ("layer0.weight", "layer0.bias", "layer1.weight", "layer1.bias"))
        xt = torch.tensor(pts, requires_grad=True)
        out = torch.tanh(xt @ W0 + b0) @ W1 + b1
        (gx,) = torch.autograd.grad(out.sum(), xt, create_graph=True)
        (gx * gx).sum().backward()
        assert np.allclose(ours["layer0.weight"], W0.grad.numpy(), rtol=1e-10, atol=1e-12)
        assert np.allclose(ours["layer1.weight"], W1.grad.numpy(), rtol=1e-10, atol=1e-12)
