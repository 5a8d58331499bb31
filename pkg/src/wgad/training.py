"""Standard GAN, clipped WGAN and WGAN-GP training loops plus diagnostics.

All three trainers share one schedule: an *epoch* is ``N // m`` generator
updates, each preceded by ``k`` (standard GAN) or ``n_critic`` (WGAN) critic
updates on freshly sampled real minibatches and latent draws.

Gradients come from one of two interchangeable backends:

``kernel``
    fused dense-network kernels from :mod:`wgad.kernels` (plain MLPs only),
``tape``
    the general autodiff engine, which also handles batch norm.

``backend="auto"`` picks ``kernel`` whenever both networks are plain stacks.
"""
from __future__ import annotations

import csv
import logging
import math
import time
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import kernels
from .nn import NetworkSpec, ParamStore, forward, forward_tape, init_params, tape_params
from .optim import make_optimizer, weight_clip

log = logging.getLogger(__name__)

VARIANTS = ("gan", "wgan_clip", "wgan_gp")
LOG_COLUMNS = ("update_index", "epoch", "critic_loss", "penalty", "gen_loss", "wall_ms")
PENALTY_EPS = 1e-12


class TrainingError(RuntimeError):
    """Training aborted: non-finite loss or divergence."""

    def __init__(self, message, update_index):
        super().__init__(f"{message} (update {update_index})")
        self.update_index = update_index


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent named sub-stream of a global seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


@dataclass(frozen=True)
class GanConfig:
    variant: str = "wgan_gp"
    batch_size: int = 64
    k: int = 1
    n_critic: int = 5
    epochs: int = 30
    latent_dim: int = 2
    lambda_gp: float = 10.0
    clip: float = 0.01
    optimizer: str | None = None
    lr: float | None = None
    beta1: float = 0.5
    beta2: float = 0.9
    seed: int = 0
    precision: str = "f64"
    backend: str = "auto"
    divergence_limit: float = 1e6
    max_updates: int | None = None
    snapshot_every: int = 0
    snapshot_size: int = 1000

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.k < 1 or self.n_critic < 1:
            raise ValueError("k and n_critic must be >= 1")
        if self.lambda_gp < 0:
            raise ValueError("lambda_gp must be >= 0")
        if self.clip <= 0:
            raise ValueError("clip must be > 0")
        if self.precision not in ("f32", "f64"):
            raise ValueError("precision must be f32 or f64")
        if self.backend not in ("auto", "kernel", "tape"):
            raise ValueError("backend must be auto, kernel or tape")
        if self.latent_dim < 1 or self.epochs < 0:
            raise ValueError("latent_dim must be >= 1 and epochs >= 0")

    @property
    def constraint(self) -> str:
        return {"gan": "none", "wgan_clip": "clipping", "wgan_gp": "penalty"}[self.variant]

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    @property
    def critic_steps(self) -> int:
        return self.k if self.variant == "gan" else self.n_critic

    def make_optimizer(self):
        name = self.optimizer or ("rmsprop" if self.variant == "wgan_clip" else "adam")
        if name == "rmsprop":
            return make_optimizer("rmsprop", lr=5e-5 if self.lr is None else self.lr)
        return make_optimizer("adam", lr=1e-4 if self.lr is None else self.lr,
                              beta1=self.beta1, beta2=self.beta2)


@dataclass
class TrainingLog:
    """One row per parameter update; critic rows leave ``gen_loss`` empty and
    generator rows leave ``critic_loss``/``penalty`` empty."""

    rows: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def add(self, epoch, critic_loss=None, penalty=None, gen_loss=None, wall_ms=0.0):
        for v in (critic_loss, penalty, gen_loss):
            if v is not None and not math.isfinite(v):
                raise TrainingError("non-finite loss", len(self.rows))
        self.rows.append((len(self.rows), epoch, critic_loss, penalty, gen_loss, wall_ms))

    def column(self, name):
        i = LOG_COLUMNS.index(name)
        return [r[i] for r in self.rows]

    def critic_rows(self):
        return [r for r in self.rows if r[2] is not None]

    def generator_rows(self):
        return [r for r in self.rows if r[4] is not None]

    def to_csv(self, path, include_wall: bool = True) -> None:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return repr(v)
            return str(v)

        cols = LOG_COLUMNS if include_wall else LOG_COLUMNS[:-1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.rows:
                row = list(r[:len(cols)])
                if include_wall:
                    row[-1] = f"{r[-1]:.3f}"
                w.writerow([fmt(v) if not isinstance(v, str) else v for v in row])

    @classmethod
    def from_csv(cls, path) -> "TrainingLog":
        out = cls()
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                def num(key):
                    v = rec.get(key, "")
                    return None if v in ("", None) else float(v)
                out.rows.append((int(rec["update_index"]), int(rec["epoch"]), num("critic_loss"),
                                 num("penalty"), num("gen_loss"), num("wall_ms") or 0.0))
        return out


@dataclass
class TrainResult:
    gen_spec: NetworkSpec
    critic_spec: NetworkSpec
    generator: ParamStore
    critic: ParamStore
    log: TrainingLog
    config: GanConfig


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------


def wasserstein_loss(labels, outputs):
    """Mean of ``labels * outputs``; labels are +1 for real and -1 for generated.

    Works on numpy arrays and on tape tensors.
    """
    lab = labels.data if isinstance(labels, ad.Tensor) else np.asarray(labels, dtype=float)
    out_shape = outputs.shape if isinstance(outputs, ad.Tensor) else np.shape(outputs)
    if lab.size != int(np.prod(out_shape)):
        raise ValueError(f"length mismatch: {lab.size} labels, {int(np.prod(out_shape))} outputs")
    if not np.all(np.isin(lab, (-1.0, 1.0))):
        raise ValueError("labels must be -1 (generated) or +1 (real)")
    if isinstance(outputs, ad.Tensor):
        return (outputs * ad.Tensor(lab.reshape(out_shape).astype(outputs.data.dtype))).mean()
    return float(np.mean(lab.reshape(out_shape) * np.asarray(outputs)))


def interpolate(real, fake, rng):
    """Per-sample uniform mixing ``eps * real + (1 - eps) * fake``."""
    if real.shape != fake.shape:
        raise ValueError(f"batch shapes differ: {real.shape} vs {fake.shape}")
    eps = rng.uniform(0.0, 1.0, size=(real.shape[0], 1)).astype(real.dtype)
    return eps * real + (1.0 - eps) * fake


def penalty_expression(tape, critic_spec, critic_leaves, points):
    """Recorded ``mean (||grad_x f(x)||_2 - 1)^2`` over the rows of ``points``."""
    x = tape.input(points, name="interpolates")
    out = forward_tape(critic_spec, critic_leaves, x, mode="infer")
    g = ad.input_gradient(tape, out.sum(), x)
    norms = ad.sqrt((g * g).sum(axis=1) + PENALTY_EPS)
    gap = norms - 1.0
    return (gap * gap).mean()


def gradient_penalty(tape, critic_spec, critic_leaves, real, fake, seed):
    """Gradient penalty on random interpolates of ``real`` and ``fake``.

    Returns a scalar tape expression whose parameter gradient is available
    through :func:`wgad.autodiff.backward`.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return penalty_expression(tape, critic_spec, critic_leaves,
                              interpolate(np.asarray(real), np.asarray(fake), rng))


# --------------------------------------------------------------------------
# gradient backends
# --------------------------------------------------------------------------


def _resolve_backend(config, *specs):
    if config.backend == "tape":
        return "tape"
    plain = not any(s.has_batch_norm for s in specs)
    if config.backend == "kernel" and not plain:
        raise ValueError("the kernel backend only supports networks without batch norm")
    return "kernel" if plain else "tape"


def _mlp_arrays(spec, params, logits=False):
    W, b = params.weights_biases()
    acts = list(spec.act_codes())
    if logits:
        acts[-1] = 0
    return W, b, tuple(acts)


def _param_grads(dW, db):
    grads = {}
    for i, (w, b) in enumerate(zip(dW, db)):
        grads[f"layer{i}.weight"] = w
        grads[f"layer{i}.bias"] = b
    return grads


def _generate(backend, spec, params, z):
    if backend == "kernel":
        W, b, acts = _mlp_arrays(spec, params)
        return kernels.mlp_forward(W, b, acts, z)[1][-1]
    return forward(spec, params, z, mode="train")


def _wgan_critic_kernel(cs, cp, real, fake, xhat, lam):
    W, b, acts = _mlp_arrays(cs, cp)
    m = real.shape[0]
    both = np.concatenate([real, fake])
    pre, post = kernels.mlp_forward(W, b, acts, both)
    out = post[-1][:, 0]
    critic_loss = float(out[:m].mean() - out[m:].mean())
    grad_out = np.concatenate([np.full(m, -1.0 / m), np.full(m, 1.0 / m)]).astype(real.dtype)[:, None]
    dW, db, _ = kernels.mlp_backward(W, acts, both, pre, post, grad_out)
    penalty = None
    if xhat is not None:
        penalty, _, pW, pb = kernels.penalty_grads(W, b, acts, xhat, PENALTY_EPS)
        dW = [a + lam * p for a, p in zip(dW, pW)]
        db = [a + lam * p for a, p in zip(db, pb)]
    return _param_grads(dW, db), critic_loss, penalty


def _wgan_critic_tape(cs, cp, real, fake, xhat, lam):
    tape = ad.Tape()
    leaves = tape_params(tape, cp)
    f_real = forward_tape(cs, leaves, ad.Tensor(real), mode="train", params=cp)
    f_fake = forward_tape(cs, leaves, ad.Tensor(fake), mode="train", params=cp)
    m = real.shape[0]
    labels = np.concatenate([np.ones(m), -np.ones(m)])
    # critic minimizes mean f(fake) - mean f(real)
    loss = -(wasserstein_loss(labels[:m], f_real) + wasserstein_loss(labels[m:], f_fake))
    penalty = None
    if xhat is not None:
        pen = penalty_expression(tape, cs, leaves, xhat)
        penalty = pen.item()
        loss = loss + lam * pen
    grads = ad.backward(tape, loss)
    critic_loss = float(f_real.data.mean() - f_fake.data.mean())
    return grads, critic_loss, penalty


def _gan_disc_kernel(ds, dp, real, fake):
    W, b, acts = _mlp_arrays(ds, dp, logits=True)
    m = real.shape[0]
    both = np.concatenate([real, fake])
    pre, post = kernels.mlp_forward(W, b, acts, both)
    logit = post[-1][:, 0]
    lr, lf = logit[:m], logit[m:]
    # value = mean log D(x) + mean log(1 - D(G(z)))
    value = float(-_softplus(-lr).mean() - _softplus(lf).mean())
    # loss = -value; d softplus(-l)/dl = -sigmoid(-l), d softplus(l)/dl = sigmoid(l)
    g = np.concatenate([-_sigmoid(-lr), _sigmoid(lf)]) / m
    dW, db, _ = kernels.mlp_backward(W, acts, both, pre, post, g[:, None].astype(real.dtype))
    return _param_grads(dW, db), value


def _gan_disc_tape(ds, dp, real, fake):
    tape = ad.Tape()
    leaves = tape_params(tape, dp)
    lr = forward_tape(ds, leaves, ad.Tensor(real), mode="train", params=dp, skip_output_activation=True)
    lf = forward_tape(ds, leaves, ad.Tensor(fake), mode="train", params=dp, skip_output_activation=True)
    loss = ad.softplus(-lr).mean() + ad.softplus(lf).mean()
    grads = ad.backward(tape, loss)
    return grads, -loss.item()


def _gen_kernel(gs, gp, cs, cp, z, kind):
    Wg, bg, ag = _mlp_arrays(gs, gp)
    Wc, bc, ac = _mlp_arrays(cs, cp, logits=(kind == "gan"))
    m = z.shape[0]
    pre_g, post_g = kernels.mlp_forward(Wg, bg, ag, z)
    fake = post_g[-1]
    pre_c, post_c = kernels.mlp_forward(Wc, bc, ac, fake)
    out = post_c[-1][:, 0]
    if kind == "gan":
        # non-saturating: minimize mean softplus(-logit) = -mean log D(G(z))
        loss = float(_softplus(-out).mean())
        g_out = (-_sigmoid(-out) / m)[:, None]
    else:
        loss = float(-out.mean())
        g_out = np.full((m, 1), -1.0 / m)
    _, _, dx = kernels.mlp_backward(Wc, ac, fake, pre_c, post_c, g_out.astype(z.dtype))
    dW, db, _ = kernels.mlp_backward(Wg, ag, z, pre_g, post_g, dx)
    return _param_grads(dW, db), loss


def _gen_tape(gs, gp, cs, cp, z, kind):
    tape = ad.Tape()
    g_leaves = tape_params(tape, gp)
    c_leaves = tape_params(tape, cp, trainable=False)
    fake = forward_tape(gs, g_leaves, ad.Tensor(z), mode="train", params=gp)
    out = forward_tape(cs, c_leaves, fake, mode="train", skip_output_activation=(kind == "gan"))
    if kind == "gan":
        loss = ad.softplus(-out).mean()
    else:
        loss = -out.mean()
    return ad.backward(tape, loss), loss.item()


def _softplus(a):
    return np.maximum(a, 0) + np.log1p(np.exp(-np.abs(a)))


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


# --------------------------------------------------------------------------
# training loops
# --------------------------------------------------------------------------


def _check_data(data, spec_in):
    data = np.asarray(data)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("training data must be a nonempty 2-D array")
    if data.shape[1] != spec_in:
        raise ValueError(f"data width {data.shape[1]} != network input width {spec_in}")
    return data


def _train(data, gen_spec, critic_spec, config, init=None):
    dtype = config.dtype
    data = np.ascontiguousarray(_check_data(data, critic_spec.in_width), dtype=dtype)
    if gen_spec.in_width != config.latent_dim:
        raise ValueError(f"generator input width {gen_spec.in_width} != latent_dim {config.latent_dim}")
    if gen_spec.out_width != critic_spec.in_width:
        raise ValueError("generator output width must equal critic input width")
    if critic_spec.out_width != 1:
        raise ValueError("critic must have a single output")
    if config.variant == "gan":
        if critic_spec.output_activation != "sigmoid":
            raise ValueError("the standard GAN discriminator needs a sigmoid output")
    elif critic_spec.output_activation != "identity":
        raise ValueError("a Wasserstein critic needs a linear (identity) output")
    if config.variant == "wgan_gp" and critic_spec.has_batch_norm:
        raise ValueError("batch norm inside the critic is incompatible with the gradient penalty")

    backend = _resolve_backend(config, gen_spec, critic_spec)
    if init is None:
        gp = init_params(gen_spec, rng_stream(config.seed, "init/generator"), dtype)
        cp = init_params(critic_spec, rng_stream(config.seed, "init/critic"), dtype)
    else:
        gp, cp = init[0].astype(dtype), init[1].astype(dtype)
    if config.variant == "wgan_clip":
        weight_clip(cp, config.clip)
    rng = rng_stream(config.seed, "training")
    snap_rng = rng_stream(config.seed, "snapshots")
    opt_c = config.make_optimizer()
    opt_g = config.make_optimizer()

    n, m, d_z = data.shape[0], config.batch_size, config.latent_dim
    per_epoch = max(1, n // m)
    log_ = TrainingLog(notes={"backend": backend, "kernel_backend": kernels.BACKEND,
                              "divergence_limit": config.divergence_limit,
                              "updates_per_epoch": per_epoch})
    lam = config.lambda_gp
    limit = config.divergence_limit
    t0 = time.perf_counter()
    gen_updates = 0

    def guard(value, what):
        if value is None:
            return
        if not math.isfinite(value):
            raise TrainingError(f"non-finite {what}", len(log_.rows))
        if abs(value) > limit:
            raise TrainingError(f"divergence: |{what}| = {abs(value):.3g} > {limit:g}", len(log_.rows))

    for epoch in range(config.epochs):
        for _ in range(per_epoch):
            if config.max_updates is not None and gen_updates >= config.max_updates:
                break
            for _ in range(config.critic_steps):
                real = data[rng.integers(0, n, m)]
                z = rng.standard_normal((m, d_z)).astype(dtype)
                fake = _generate(backend, gen_spec, gp, z)
                if config.variant == "gan":
                    fn = _gan_disc_kernel if backend == "kernel" else _gan_disc_tape
                    grads, c_loss = fn(critic_spec, cp, real, fake)
                    pen = None
                    guard(c_loss, "discriminator loss")
                else:
                    xhat = interpolate(real, fake, rng) if config.variant == "wgan_gp" else None
                    fn = _wgan_critic_kernel if backend == "kernel" else _wgan_critic_tape
                    grads, c_loss, pen = fn(critic_spec, cp, real, fake, xhat, lam)
                    guard(c_loss, "critic loss")
                    guard(pen, "penalty")
                opt_c.step(cp, grads)
                if config.variant == "wgan_clip":
                    weight_clip(cp, config.clip)
                log_.add(epoch, critic_loss=c_loss, penalty=pen,
                         wall_ms=(time.perf_counter() - t0) * 1e3)

            z = rng.standard_normal((m, d_z)).astype(dtype)
            kind = "gan" if config.variant == "gan" else "wgan"
            fn = _gen_kernel if backend == "kernel" else _gen_tape
            grads, g_loss = fn(gen_spec, gp, critic_spec, cp, z, kind)
            guard(g_loss, "generator loss")
            opt_g.step(gp, grads)
            gen_updates += 1
            log_.add(epoch, gen_loss=g_loss, wall_ms=(time.perf_counter() - t0) * 1e3)
            if config.snapshot_every and gen_updates % config.snapshot_every == 0:
                log_.snapshots.append((gen_updates, sample_generator(
                    gen_spec, gp, config.snapshot_size, snap_rng)))
        log.debug("epoch %d done, %d updates", epoch, len(log_.rows))
    return TrainResult(gen_spec, critic_spec, gp, cp, log_, config)


def train_standard_gan(data, gen_spec, disc_spec, config: GanConfig | None = None, init=None):
    """Minibatch GAN training: ``k`` discriminator ascent steps per generator step.

    The generator uses the non-saturating objective (ascend ``log D(G(z))``).
    """
    config = config or GanConfig(variant="gan")
    if config.variant != "gan":
        config = replace(config, variant="gan")
    return _train(data, gen_spec, disc_spec, config, init)


def train_wgan_gp(data, gen_spec, critic_spec, config: GanConfig | None = None, init=None):
    """WGAN with gradient penalty; Adam (1e-4, 0.5, 0.9), ``n_critic = 5``, ``lambda = 10``."""
    config = config or GanConfig()
    if config.variant != "wgan_gp":
        config = replace(config, variant="wgan_gp")
    return _train(data, gen_spec, critic_spec, config, init)


def train_wgan_clip(data, gen_spec, critic_spec, config: GanConfig | None = None, init=None):
    """WGAN with weight clipping to ``[-c, c]`` after every critic update; RMSprop 5e-5."""
    config = config or GanConfig(variant="wgan_clip")
    if config.variant != "wgan_clip":
        config = replace(config, variant="wgan_clip")
    return _train(data, gen_spec, critic_spec, config, init)


TRAINERS = {"gan": train_standard_gan, "wgan_clip": train_wgan_clip, "wgan_gp": train_wgan_gp}


def sample_generator(gen_spec, gen_params, n, rng, mode="infer"):
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    z = rng.standard_normal((n, gen_spec.in_width)).astype(gen_params.dtype)
    return forward(gen_spec, gen_params, z, mode=mode)


# --------------------------------------------------------------------------
# diagnostics
# --------------------------------------------------------------------------


def js_divergence_estimate(p_samples, q_samples, bins: int = 50, pseudocount: float = 1e-9) -> float:
    """Histogram estimate of the Jensen-Shannon divergence (nats) of two 2-D samples."""
    p = np.asarray(p_samples, dtype=float)
    q = np.asarray(q_samples, dtype=float)
    if len(p) == 0 or len(q) == 0:
        raise ValueError("empty sample set")
    if p.ndim != 2 or q.ndim != 2 or p.shape[1] != 2 or q.shape[1] != 2:
        raise ValueError("samples must be 2-dimensional points")
    if bins < 2:
        raise ValueError("need at least 2 bins per axis")
    both = np.concatenate([p, q])
    lo, hi = both.min(axis=0), both.max(axis=0)
    hi = np.where(hi > lo, hi, lo + 1.0)
    edges = [np.linspace(lo[i], hi[i], bins + 1) for i in range(2)]
    hp = np.histogram2d(p[:, 0], p[:, 1], bins=edges)[0].ravel() + pseudocount
    hq = np.histogram2d(q[:, 0], q[:, 1], bins=edges)[0].ravel() + pseudocount
    hp /= hp.sum()
    hq /= hq.sum()
    mid = 0.5 * (hp + hq)
    js = 0.5 * np.sum(hp * np.log(hp / mid)) + 0.5 * np.sum(hq * np.log(hq / mid))
    return float(min(max(js, 0.0), np.log(2.0)))


def mode_coverage(samples, centers, radius: float, min_fraction: float = 0.02):
    """Count modes holding at least ``min_fraction`` of all samples within ``radius``.

    Samples are assigned to their nearest center first.  Returns
    ``(covered_count, per_mode_fractions)``.
    """
    samples = np.asarray(samples, dtype=float)
    centers = np.asarray(centers, dtype=float)
    if len(centers) == 0:
        raise ValueError("need at least one center")
    if radius <= 0:
        raise ValueError("radius must be positive")
    n = len(samples)
    if n == 0:
        return 0, np.zeros(len(centers))
    d2 = ((samples[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    nearest = d2.argmin(axis=1)
    within = d2[np.arange(n), nearest] <= radius * radius
    counts = np.bincount(nearest[within], minlength=len(centers))
    fractions = counts / n
    # integer comparison keeps the threshold exactly inclusive
    covered = int(np.sum(counts * 1.0 >= min_fraction * n - 1e-9 * n))
    return covered, fractions


def kde_density(samples, bandwidth: float = 0.05):
    """Callable 2-D Gaussian kernel density estimate over ``samples``."""
    samples = np.ascontiguousarray(samples, dtype=np.float64)

    def density(x):
        x = np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)
        return kernels.gaussian_kde(x, samples, bandwidth)

    return density


def optimal_discriminator(x, real_density, gen_density):
    """``P_r(x) / (P_r(x) + P_g(x))`` for density callables (or precomputed values)."""
    pr = np.asarray(real_density(x) if callable(real_density) else real_density, dtype=float)
    pg = np.asarray(gen_density(x) if callable(gen_density) else gen_density, dtype=float)
    total = pr + pg
    if np.any(total <= 0):
        raise ValueError("both densities are zero at a query point")
    return pr / total
