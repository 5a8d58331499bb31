"""End-to-end acceptance criteria.

Each test prints one ``[criterion N] PASS|FAIL|SKIP ...`` line (visible with
``pytest -s`` and collected in the terminal summary) and asserts the criterion
at its stated tolerance.  Run only these with ``pytest -m acceptance -s``.
"""
import hashlib
import math
import time
from pathlib import Path

import numpy as np
import pytest

from wgad import autodiff as ad
from wgad import checkpoint, evaluation
from wgad import training as tr
from wgad.config import load_config
from wgad.datasets import GaussianMixtureSpec, sample_gaussian_mixture
from wgad.experiment import fit_encoder, load_data, train_gan
from wgad.nn import Network, NetworkSpec, forward_tape, init_params
from wgad.scoring import critic_score, encoder_mse_score, fit_critic_interval

pytestmark = pytest.mark.acceptance

RECIPES = Path(__file__).resolve().parents[1] / "recipes"
TOY_SEEDS = (0, 1, 2, 3, 4)
RESULTS = {}


def report(n, ok, detail, skipped=False):
    status = "SKIP" if skipped else ("PASS" if ok else "FAIL")
    line = f"[criterion {n}] {status} {detail}"
    RESULTS[n] = line
    print("\n" + line)
    return ok


def random_mlp(rng, depth_max=3, width_max=16, in_max=6):
    widths = [int(rng.integers(1, in_max + 1))]
    widths += [int(rng.integers(1, width_max + 1)) for _ in range(int(rng.integers(1, depth_max + 1)))]
    hidden = str(rng.choice(["tanh", "sigmoid", "leaky_relu", "identity"]))
    output = str(rng.choice(["identity", "sigmoid", "tanh"]))
    return NetworkSpec.mlp(widths, hidden=hidden, output=output)


# --------------------------------------------------------------------------
# 1-2: gradients
# --------------------------------------------------------------------------


def test_criterion_1_autodiff_matches_finite_differences():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(50):
        spec = random_mlp(rng)
        x = rng.normal(size=(int(rng.integers(1, 9)), spec.in_width))

        def loss(tape, params, spec=spec, x=x):
            out = forward_tape(spec, params, ad.Tensor(x))
            return (out * out).mean()

        worst = max(worst, ad.finite_diff_check(loss, dict(init_params(spec, i).items())))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-6 and elapsed < 60
    report(1, ok, f"50 random nets, worst relative error {worst:.2e} (< 1e-6), {elapsed:.1f} s (< 60 s)")
    assert ok


def test_criterion_2_penalty_parameter_gradient():
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(20):
        widths = [int(rng.integers(1, 5))]
        widths += [int(rng.integers(1, 9)) for _ in range(int(rng.integers(1, 3)))] + [1]
        spec = NetworkSpec.mlp(widths, hidden=str(rng.choice(["tanh", "sigmoid", "leaky_relu"])))
        real = rng.normal(size=(4, widths[0]))
        fake = rng.normal(size=(4, widths[0]))
        draw = int(rng.integers(2**32))

        def penalty(tape, params, spec=spec, real=real, fake=fake, draw=draw):
            return tr.gradient_penalty(tape, spec, params, real, fake, draw)

        worst = max(worst, ad.finite_diff_check(penalty, dict(init_params(spec, i).items()), step=1e-5))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 60
    report(2, ok, f"20 critics, worst relative error {worst:.2e} (< 1e-4), {elapsed:.1f} s (< 60 s)")
    assert ok


# --------------------------------------------------------------------------
# 3-4: toy mixture
# --------------------------------------------------------------------------


def toy_run(variant, seed):
    """Recipe defaults for ``variant`` with ``run.seed`` replaced; returns (cfg, data, result, seconds)."""
    recipe = {"wgan_gp": "toy_wgan_gp.ini", "gan": "toy_gan.ini"}[variant]
    cfg = load_config(RECIPES / recipe).with_overrides(**{"run.seed": seed})
    data = load_data(cfg)
    t0 = time.perf_counter()
    result = train_gan(cfg, data)
    return cfg, data, result, time.perf_counter() - t0


def coverage(result, spec, seed):
    samples = tr.sample_generator(result.gen_spec, result.generator, 10000, tr.rng_stream(seed, "evaluation"))
    return tr.mode_coverage(samples, spec.centers, 0.15)[0]


@pytest.fixture(scope="module")
def toy_runs():
    runs = {}
    for seed in TOY_SEEDS:
        runs[seed] = toy_run("wgan_gp", seed)
    return runs


@pytest.mark.slow
def test_criterion_3_wgan_gp_covers_all_modes(toy_runs):
    cfg = toy_runs[0][0]
    assert (cfg["training.lambda_gp"], cfg["training.batch_size"], cfg["training.n_critic"]) == (10.0, 64, 5)
    assert (cfg["dataset.n"], cfg["training.epochs"]) == (20000, 30)
    modes, seconds = {}, {}
    for seed, (_, data, result, sec) in toy_runs.items():
        assert result.config.make_optimizer().lr == 1e-4
        modes[seed], seconds[seed] = coverage(result, data.spec, seed), sec
    gan_modes = {}
    for seed in TOY_SEEDS:
        _, data, result, _ = toy_run("gan", seed)
        gan_modes[seed] = coverage(result, data.spec, seed)
    full = sum(m == 7 for m in modes.values())
    ok = full >= 4 and max(seconds.values()) <= 15 * 60
    report(3, ok, f"WGAN-GP modes per seed {modes} -> 7/7 in {full}/5 seeds (need >= 4); "
                  f"slowest run {max(seconds.values()):.0f} s (<= 900 s); "
                  f"standard GAN modes per seed {gan_modes} (reported only)")
    assert ok


@pytest.mark.slow
def test_criterion_4_critic_interval_detector(toy_runs):
    cfg, data, result, _ = toy_runs[0]
    critic = Network(result.critic_spec, result.critic)
    t0 = time.perf_counter()
    interval = fit_critic_interval(critic, data.train.samples)
    scores = critic_score(critic, interval, data.test.samples)
    ap = evaluation.average_precision(scores, data.test.labels)
    elapsed = time.perf_counter() - t0
    counts = np.bincount(data.test.labels, minlength=2).tolist()
    ok = ap >= 0.90 and elapsed <= 120 and counts == [1000, 1000]
    report(4, ok, f"critic interval AUPRC {ap:.3f} (>= 0.90) on {counts[0]} normals + {counts[1]} anomalies, "
                  f"scoring {elapsed:.1f} s (<= 120 s)")
    assert ok


# --------------------------------------------------------------------------
# 5-6: image and time-series recipes
# --------------------------------------------------------------------------


def encoder_pipeline(cfg):
    data = load_data(cfg)
    t0 = time.perf_counter()
    result = train_gan(cfg, data)
    generator = Network(result.gen_spec, result.generator)
    bundle = fit_encoder(cfg, generator, data)
    scores = encoder_mse_score(bundle, data.test.samples)
    ap = evaluation.average_precision(scores, data.test.labels)
    return data, ap, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_5_mnist_leave_zero_out():
    cfg = load_config(RECIPES / "mnist_leave0.ini")
    try:
        data, ap, elapsed = encoder_pipeline(cfg)
    except Exception as exc:  # no MNIST directory and no bundled sample
        if "not found" not in str(exc):
            raise
        report(5, True, f"MNIST unavailable ({exc})", skipped=True)
        pytest.skip(str(exc))
    prevalence = float(data.test.labels.mean())
    width = data.train.samples.shape[1]
    ok = (ap >= 0.75 and ap >= 2 * prevalence and elapsed <= 90 * 60
          and width == 14 * 14 and len(data.train) <= 20000)
    report(5, ok, f"{data.source}: {len(data.train)} training images of {int(math.isqrt(width))}x"
                  f"{int(math.isqrt(width))}, encoder_mse AUPRC {ap:.3f} (>= 0.75 and >= 2 x prevalence "
                  f"{prevalence:.3f}), {elapsed / 60:.1f} min (<= 90 min)")
    assert ok


@pytest.mark.slow
def test_criterion_6_har_laying():
    cfg = load_config(RECIPES / "har_laying.ini")
    data, ap, elapsed = encoder_pipeline(cfg)
    detail = (f"total_acc, 'laying' abnormal: encoder_mse AUPRC {ap:.3f} (>= 0.60), "
              f"{elapsed / 60:.1f} min (<= 60 min)")
    if data.source == "har_synthetic":
        report(6, True, f"UCI-HAR not present; synthetic stand-in only, {detail}", skipped=True)
        pytest.skip("UCI-HAR dataset not present; ran the synthetic stand-in only")
    ok = ap >= 0.60 and elapsed <= 60 * 60
    report(6, ok, detail)
    assert ok


# --------------------------------------------------------------------------
# 7-9: metrics, losses, determinism
# --------------------------------------------------------------------------


def brute_force_ap(scores, labels):
    n_pos = sum(labels)
    prev, terms, triples = 0.0, [], []
    for t in sorted(set(scores), reverse=True):
        flagged = [y for s, y in zip(scores, labels) if s >= t]
        p, r = sum(flagged) / len(flagged), sum(flagged) / n_pos
        triples.append((t, p, r))
        terms.append((r - prev) * p)
        prev = r
    return triples, math.fsum(terms)


def test_criterion_7_auprc_exact_and_random_baseline():
    rng = np.random.default_rng(707)
    mismatches = 0
    for _ in range(200):
        n = int(rng.integers(2, 21))
        labels = rng.integers(0, 2, n)
        labels[0], labels[-1] = 0, 1
        scores = (rng.integers(0, max(2, n // 2), n) / 4.0).tolist()
        labels = labels.tolist()
        curve = evaluation.pr_curve(scores, labels)
        triples, ap = brute_force_ap(scores, labels)
        mismatches += curve.triples() != triples or evaluation.auprc(curve) != ap
    labels = (rng.uniform(size=100_000) < 0.3).astype(int)
    random_ap = evaluation.average_precision(rng.uniform(size=100_000), labels)
    gap = abs(random_ap - labels.mean())
    ok = mismatches == 0 and gap <= 0.01
    report(7, ok, f"{200 - mismatches}/200 sets exactly equal to brute force; random scorer AUPRC "
                  f"{random_ap:.4f} vs prevalence {labels.mean():.4f} (|gap| {gap:.4f} <= 0.01)")
    assert ok


def test_criterion_8_wasserstein_loss_and_clipping(monkeypatch):
    rng = np.random.default_rng(808)
    exact = 0
    for _ in range(100):
        n = int(rng.integers(1, 50))
        labels = rng.choice([-1.0, 1.0], n)
        outputs = rng.normal(size=n) * 10 ** rng.uniform(-3, 3)
        exact += tr.wasserstein_loss(labels, outputs) == float(np.mean(labels * outputs))

    seen = []
    original = tr.weight_clip

    def checked(params, c):
        out = original(params, c)
        seen.append(max(float(np.abs(params[k]).max()) for k in params.trainable))
        return out

    monkeypatch.setattr(tr, "weight_clip", checked)
    data = sample_gaussian_mixture(GaussianMixtureSpec(), 2000, seed=8)
    gen = NetworkSpec.mlp([2, 32, 32, 2])
    critic = NetworkSpec.mlp([2, 32, 32, 1])
    tr.train_wgan_clip(data, gen, critic, tr.GanConfig(variant="wgan_clip", epochs=1, max_updates=20, seed=8))
    updates = len(seen) - 1  # the first call clips the initial weights
    ok = exact == 100 and updates == 100 and max(seen) <= 0.01
    report(8, ok, f"wasserstein_loss equal to mean of products in {exact}/100 cases; "
                  f"max |param| after each of {updates} critic updates {max(seen):.4g} (<= 0.01)")
    assert ok


def test_criterion_9_same_seed_runs_identical(tmp_path):
    data = sample_gaussian_mixture(GaussianMixtureSpec(), 1000, seed=9)
    gen = NetworkSpec.mlp([2, 16, 16, 2])
    critic = NetworkSpec.mlp([2, 16, 16, 1])
    digests = []
    for run in ("a", "b"):
        res = tr.train_wgan_gp(data, gen, critic, tr.GanConfig(epochs=2, seed=42, precision="f64"))
        ckpt, log = tmp_path / f"{run}.wgad", tmp_path / f"{run}.csv"
        checkpoint.save(ckpt, checkpoint.pack_stores(generator=res.generator, critic=res.critic))
        res.log.to_csv(log, include_wall=False)
        digests.append(tuple(hashlib.sha256(p.read_bytes()).hexdigest() for p in (ckpt, log)))
    ok = digests[0] == digests[1]
    report(9, ok, f"checkpoint sha256 {digests[0][0][:12]} / {digests[1][0][:12]}, "
                  f"log sha256 {digests[0][1][:12]} / {digests[1][1][:12]}")
    assert ok
