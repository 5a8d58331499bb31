import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wgad import autodiff as ad
from wgad import training as tr
from wgad.datasets import GaussianMixtureSpec, sample_gaussian_mixture
from wgad.nn import Layer, NetworkSpec, ParamStore, forward, init_params, tape_params


def _linear_critic(w, b=0.0):
    spec = NetworkSpec((Layer(len(w), 1),))
    params = ParamStore({"layer0.weight": np.array(w, float).reshape(-1, 1),
                         "layer0.bias": np.array([b], float)}, ["layer0.weight", "layer0.bias"])
    return spec, params


def _specs(variant="wgan_gp", hidden=(16,)):
    gen = NetworkSpec.mlp([2, *hidden, 2], hidden="leaky_relu")
    critic = NetworkSpec.mlp([2, *hidden, 1], hidden="leaky_relu",
                             output="sigmoid" if variant == "gan" else "identity")
    return gen, critic


@pytest.fixture(scope="module")
def ring():
    return sample_gaussian_mixture(GaussianMixtureSpec(), 640, seed=1)


class TestWassersteinLoss:
    @pytest.mark.parametrize("labels,outputs,expected", [
        ([1, -1], [2.0, 3.0], -0.5),
        ([1, 1, 1], [1.0, 2.0, 3.0], 2.0),
        ([-1], [0.25], -0.25),
    ])
    def test_examples(self, labels, outputs, expected):
        assert tr.wasserstein_loss(labels, outputs) == expected

    @given(st.lists(st.tuples(st.sampled_from([-1, 1]), st.floats(-1e3, 1e3)), min_size=1, max_size=50))
    def test_mean_of_products(self, pairs):
        y = np.array([p[0] for p in pairs], float)
        f = np.array([p[1] for p in pairs])
        assert tr.wasserstein_loss(y, f) == float(np.mean(y * f))

    def test_tensor_input(self):
        tape = ad.Tape()
        out = tape.param("o", np.array([[1.0], [3.0]]))
        loss = tr.wasserstein_loss([1, -1], out)
        assert loss.item() == -1.0
        assert np.array_equal(ad.backward(tape, loss)["o"], [[0.5], [-0.5]])

    def test_bad_labels(self):
        with pytest.raises(ValueError, match="labels"):
            tr.wasserstein_loss([0, 1], [1.0, 2.0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            tr.wasserstein_loss([1, 1, -1], [1.0, 2.0])


class TestGradientPenalty:
    @pytest.mark.parametrize("w,expected", [([0.6, 0.8], 0.0), ([3.0, 0.0], 4.0), ([0.0, 0.0], (np.sqrt(tr.PENALTY_EPS) - 1) ** 2)])
    def test_linear_critic(self, w, expected, rng):
        spec, params = _linear_critic(w)
        tape = ad.Tape()
        pen = tr.gradient_penalty(tape, spec, tape_params(tape, params),
                                  rng.normal(size=(5, 2)), rng.normal(size=(5, 2)), 0)
        assert pen.item() == pytest.approx(expected, abs=1e-10)

    def test_linear_critic_gradient(self, rng):
        # d/dw (|w| - 1)^2 = 2 (|w| - 1) w / |w|
        w = np.array([1.5, -2.0])
        spec, params = _linear_critic(w)
        tape = ad.Tape()
        pen = tr.gradient_penalty(tape, spec, tape_params(tape, params),
                                  rng.normal(size=(4, 2)), rng.normal(size=(4, 2)), 0)
        g = ad.backward(tape, pen)["layer0.weight"].ravel()
        assert np.allclose(g, 2 * (2.5 - 1) * w / 2.5)

    @given(st.integers(0, 1000))
    @settings(max_examples=20, deadline=None)
    def test_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        spec = NetworkSpec.mlp([2, 5, 1], hidden="tanh")
        tape = ad.Tape()
        pen = tr.gradient_penalty(tape, spec, tape_params(tape, init_params(spec, seed)),
                                  rng.normal(size=(6, 2)), rng.normal(size=(6, 2)), rng)
        assert pen.item() >= 0.0

    def test_interpolates_lie_between(self, rng):
        real, fake = rng.normal(size=(50, 3)), rng.normal(size=(50, 3))
        x = tr.interpolate(real, fake, np.random.default_rng(0))
        eps = np.random.default_rng(0).uniform(size=(50, 1))
        assert np.allclose(x, eps * real + (1 - eps) * fake)

    def test_interpolate_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            tr.interpolate(np.zeros((3, 2)), np.zeros((4, 2)), rng)


class TestSingleSteps:
    def test_critic_step_linear_oracle(self, rng):
        w = np.array([0.5, 2.0])
        spec, params = _linear_critic(w, 0.3)
        real, fake = rng.normal(size=(8, 2)), rng.normal(size=(8, 2))
        xhat = tr.interpolate(real, fake, rng)
        grads, c_loss, pen = tr._wgan_critic_kernel(spec, params, real, fake, xhat, 10.0)
        norm = np.linalg.norm(w)
        expected = fake.mean(0) - real.mean(0) + 10.0 * 2 * (norm - 1) * w / norm
        assert np.allclose(grads["layer0.weight"].ravel(), expected, atol=1e-12)
        assert grads["layer0.bias"][0] == pytest.approx(0.0, abs=1e-12)
        assert c_loss == pytest.approx((real - fake).mean(0) @ w)
        assert pen == pytest.approx((norm - 1) ** 2)

    @pytest.mark.parametrize("variant", tr.VARIANTS)
    def test_kernel_and_tape_backends_agree(self, variant, ring):
        gen, critic = _specs(variant)
        base = tr.GanConfig(variant=variant, epochs=1, max_updates=3, seed=5)
        a = tr.TRAINERS[variant](ring, gen, critic, dataclasses.replace(base, backend="kernel"))
        b = tr.TRAINERS[variant](ring, gen, critic, dataclasses.replace(base, backend="tape"))
        for name in a.generator:
            assert np.allclose(a.generator[name], b.generator[name], rtol=0, atol=1e-10)
        for ra, rb in zip(a.log.rows, b.log.rows):
            for va, vb in zip(ra[2:5], rb[2:5]):
                assert (va is None) == (vb is None)
                if va is not None:
                    assert va == pytest.approx(vb, rel=1e-9, abs=1e-12)

    def test_standard_gan_loss_oracle(self, rng):
        _, params = _linear_critic([0.4, -0.1], 0.2)
        spec = NetworkSpec((Layer(2, 1, "sigmoid"),))
        real, fake = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
        _, loss = tr._gan_disc_kernel(spec, params, real, fake)
        d_real = forward(spec, params, real)[:, 0]
        d_fake = forward(spec, params, fake)[:, 0]
        # the logged quantity is the value function the discriminator ascends
        assert loss == pytest.approx(np.log(d_real).mean() + np.log(1 - d_fake).mean(), rel=1e-12)


class TestSchedule:
    @pytest.mark.parametrize("variant,per_gen", [("wgan_gp", 5), ("wgan_clip", 5), ("gan", 1)])
    def test_row_counts(self, variant, per_gen, ring):
        gen, critic = _specs(variant)
        res = tr.TRAINERS[variant](ring, gen, critic, tr.GanConfig(variant=variant, epochs=2, seed=0))
        assert len(res.log.generator_rows()) == 2 * (640 // 64)
        assert len(res.log.critic_rows()) == per_gen * 2 * (640 // 64)
        assert res.log.column("update_index") == list(range(len(res.log.rows)))
        assert set(res.log.column("epoch")) == {0, 1}

    def test_max_updates(self, ring):
        gen, critic = _specs()
        res = tr.train_wgan_gp(ring, gen, critic, tr.GanConfig(epochs=5, max_updates=4))
        assert len(res.log.generator_rows()) == 4

    def test_penalty_logged_only_for_gp(self, ring):
        gen, critic = _specs()
        res = tr.train_wgan_clip(ring, gen, critic, tr.GanConfig(variant="wgan_clip", epochs=1, max_updates=2))
        assert all(r[3] is None for r in res.log.critic_rows())
        res = tr.train_wgan_gp(ring, gen, critic, tr.GanConfig(epochs=1, max_updates=2))
        assert all(r[3] >= 0 for r in res.log.critic_rows())

    def test_snapshots(self, ring):
        gen, critic = _specs()
        res = tr.train_wgan_gp(ring, gen, critic,
                               tr.GanConfig(epochs=1, snapshot_every=5, snapshot_size=30))
        assert [s[0] for s in res.log.snapshots] == [5, 10]
        assert res.log.snapshots[0][1].shape == (30, 2)

    def test_clip_holds_after_every_update(self, ring, monkeypatch):
        seen = []
        original = tr.weight_clip

        def checked(params, c):
            out = original(params, c)
            seen.append(max(float(np.abs(params[k]).max()) for k in params.trainable))
            return out

        monkeypatch.setattr(tr, "weight_clip", checked)
        gen, critic = _specs("wgan_clip")
        tr.train_wgan_clip(ring, gen, critic, tr.GanConfig(variant="wgan_clip", epochs=1, max_updates=4))
        assert len(seen) == 1 + 4 * 5
        assert max(seen) <= 0.01


class TestValidation:
    def test_gan_needs_sigmoid(self, ring):
        gen, critic = _specs("wgan_gp")
        with pytest.raises(ValueError, match="sigmoid"):
            tr.train_standard_gan(ring, gen, critic)

    def test_critic_needs_linear_output(self, ring):
        gen, critic = _specs("gan")
        with pytest.raises(ValueError, match="linear"):
            tr.train_wgan_gp(ring, gen, critic)

    def test_bn_critic_rejected_for_penalty(self, ring):
        gen, _ = _specs()
        critic = NetworkSpec.mlp([2, 4, 1], bn_hidden=True)
        with pytest.raises(ValueError, match="batch norm"):
            tr.train_wgan_gp(ring, gen, critic)

    def test_width_mismatch(self, ring):
        gen = NetworkSpec.mlp([2, 4, 3])
        _, critic = _specs()
        with pytest.raises(ValueError, match="width"):
            tr.train_wgan_gp(ring, gen, critic)

    @pytest.mark.parametrize("field,value", [("variant", "lsgan"), ("batch_size", 0), ("n_critic", 0),
                                             ("lambda_gp", -1.0), ("precision", "f16"), ("backend", "gpu")])
    def test_config_fields(self, field, value):
        with pytest.raises(ValueError):
            tr.GanConfig(**{field: value})

    def test_defaults(self):
        c = tr.GanConfig()
        assert (c.batch_size, c.n_critic, c.lambda_gp, c.beta1, c.beta2) == (64, 5, 10.0, 0.5, 0.9)
        opt = c.make_optimizer()
        assert opt.lr == 1e-4
        assert tr.GanConfig(variant="wgan_clip").make_optimizer().lr == 5e-5

    def test_divergence_guard(self, ring):
        gen, critic = _specs()
        with pytest.raises(tr.TrainingError, match="divergence") as info:
            tr.train_wgan_gp(ring * 1e3, gen, critic, tr.GanConfig(epochs=1, divergence_limit=1.0))
        assert info.value.update_index >= 0

    def test_log_rejects_non_finite(self):
        with pytest.raises(tr.TrainingError):
            tr.TrainingLog().add(0, critic_loss=float("nan"))


class TestDeterminism:
    def test_same_seed_same_result(self, ring, tmp_path):
        gen, critic = _specs()
        cfg = tr.GanConfig(epochs=1, seed=11)
        a = tr.train_wgan_gp(ring, gen, critic, cfg)
        b = tr.train_wgan_gp(ring, gen, critic, cfg)
        assert a.generator.checksum() == b.generator.checksum()
        a.log.to_csv(tmp_path / "a.csv", include_wall=False)
        b.log.to_csv(tmp_path / "b.csv", include_wall=False)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_different_seed_differs(self, ring):
        gen, critic = _specs()
        a = tr.train_wgan_gp(ring, gen, critic, tr.GanConfig(epochs=1, max_updates=2, seed=1))
        b = tr.train_wgan_gp(ring, gen, critic, tr.GanConfig(epochs=1, max_updates=2, seed=2))
        assert a.generator.checksum() != b.generator.checksum()

    def test_named_streams_independent(self):
        a = tr.rng_stream(3, "training").standard_normal(4)
        b = tr.rng_stream(3, "data").standard_normal(4)
        assert not np.allclose(a, b)
        assert np.array_equal(a, tr.rng_stream(3, "training").standard_normal(4))

    def test_f32_precision(self, ring):
        gen, critic = _specs()
        res = tr.train_wgan_gp(ring, gen, critic, tr.GanConfig(epochs=1, max_updates=2, precision="f32"))
        assert res.generator.dtype == np.float32


class TestLogCsv:
    def test_round_trip(self, tmp_path):
        log = tr.TrainingLog()
        log.add(0, critic_loss=0.1, penalty=0.02, wall_ms=1.5)
        log.add(0, gen_loss=-0.3, wall_ms=2.25)
        log.to_csv(tmp_path / "log.csv")
        back = tr.TrainingLog.from_csv(tmp_path / "log.csv")
        assert back.rows == log.rows

    def test_columns(self, tmp_path):
        tr.TrainingLog().to_csv(tmp_path / "log.csv")
        assert (tmp_path / "log.csv").read_text().strip() == ",".join(tr.LOG_COLUMNS)


class TestDiagnostics:
    def test_js_identical_is_zero(self, rng):
        p = rng.normal(size=(2000, 2))
        assert tr.js_divergence_estimate(p, p) == pytest.approx(0.0, abs=1e-12)

    def test_js_disjoint_is_ln2(self, rng):
        p = rng.uniform(0, 1, size=(500, 2))
        assert tr.js_divergence_estimate(p, p + 5.0) == pytest.approx(np.log(2), rel=1e-6)

    def test_js_symmetric(self, rng):
        p, q = rng.normal(size=(500, 2)), rng.normal(0.5, 1, size=(500, 2))
        assert tr.js_divergence_estimate(p, q) == pytest.approx(tr.js_divergence_estimate(q, p))

    def test_js_rejects_bad_input(self):
        with pytest.raises(ValueError):
            tr.js_divergence_estimate(np.zeros((0, 2)), np.zeros((3, 2)))
        with pytest.raises(ValueError):
            tr.js_divergence_estimate(np.zeros((3, 3)), np.zeros((3, 3)))

    def test_mode_coverage_counts(self):
        centers = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        samples = np.array([[0.0, 0.0]] * 50 + [[1.0, 0.05]] * 2 + [[5.0, 5.0]] * 48)
        covered, frac = tr.mode_coverage(samples, centers, 0.15)
        assert covered == 2
        assert np.allclose(frac, [0.5, 0.02, 0.0])

    def test_mode_coverage_boundary_inclusive(self):
        centers = np.array([[0.0, 0.0]])
        covered, _ = tr.mode_coverage(np.array([[0.15, 0.0]]), centers, 0.15, min_fraction=1.0)
        assert covered == 1

    def test_mode_coverage_of_true_mixture(self):
        spec = GaussianMixtureSpec()
        covered, frac = tr.mode_coverage(sample_gaussian_mixture(spec, 10000, seed=0), spec.centers, 0.15)
        assert covered == 7
        # mass of a 2-D Gaussian within 3 sigma is 1 - exp(-4.5)
        assert frac.sum() == pytest.approx(1 - np.exp(-4.5), abs=0.01)

    def test_optimal_discriminator(self):
        assert np.allclose(tr.optimal_discriminator(None, np.array([1.0, 3.0]), np.array([1.0, 1.0])),
                           [0.5, 0.75])
        with pytest.raises(ValueError):
            tr.optimal_discriminator(None, np.zeros(1), np.zeros(1))

    def test_optimal_discriminator_with_kde(self, rng):
        real = rng.normal(0, 0.1, size=(500, 2))
        fake = rng.normal(1, 0.1, size=(500, 2))
        d = tr.optimal_discriminator(np.array([[0.0, 0.0], [1.0, 1.0]]),
                                     tr.kde_density(real), tr.kde_density(fake))
        assert d[0] > 0.99 and d[1] < 0.01
