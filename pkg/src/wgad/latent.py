"""Latent codes for data points: generator inversion and a post-hoc encoder.

Inversion runs gradient descent on

    L_x(z) = recon(x, G(z)) + lambda_prior * (-log p(z))

with ``p`` the standard-normal density, from several random starts.  The
encoder route instead trains ``E`` so that ``G(E(x))`` reconstructs ``x``
while ``G`` stays frozen; its last layer is batch-normalized so codes look
like draws from the latent prior.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import kernels
from .nn import Network, NetworkSpec, forward, forward_tape, init_params, tape_params
from .optim import Adam

LOG_2PI = math.log(2.0 * math.pi)
RECON_KINDS = ("mse", "bce")
BCE_CLIP = 1e-7


class GeneratorMutated(RuntimeError):
    """The frozen generator changed during encoder training."""


@dataclass(frozen=True)
class InversionConfig:
    steps: int = 400
    step_size: float = 0.01
    lambda_prior: float = 0.1
    restarts: int = 3
    recon: str = "mse"
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.lambda_prior < 0:
            raise ValueError("lambda_prior must be >= 0")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.recon not in RECON_KINDS:
            raise ValueError(f"recon must be one of {RECON_KINDS}")


def _recon_loss_and_grad(x, out, kind):
    """Per-row loss and its gradient w.r.t. the generator output."""
    if kind == "mse":
        diff = out - x
        return (diff * diff).sum(axis=1), 2.0 * diff
    p = np.clip(out, BCE_CLIP, 1.0 - BCE_CLIP)
    loss = -(x * np.log(p) + (1.0 - x) * np.log1p(-p)).sum(axis=1)
    grad = (p - x) / (p * (1.0 - p))
    grad = np.where((out > BCE_CLIP) & (out < 1.0 - BCE_CLIP), grad, 0.0)
    return loss, grad


def _neg_log_prior(z):
    return 0.5 * (z * z).sum(axis=1) + 0.5 * z.shape[1] * LOG_2PI


def _generator_vjp(gen: Network, z, kind, x):
    """Per-row loss of ``G(z)`` and the gradient of their sum w.r.t. ``z``."""
    spec, params = gen.spec, gen.params
    if not spec.has_batch_norm:
        W, b = params.weights_biases()
        acts = spec.act_codes()
        pre, post = kernels.mlp_forward(W, b, acts, z)
        loss, g_out = _recon_loss_and_grad(x, post[-1], kind)
        _, _, dz = kernels.mlp_backward(W, acts, z, pre, post, np.ascontiguousarray(g_out))
        return loss, dz
    out = forward(spec, params, z, mode="infer")
    loss, g_out = _recon_loss_and_grad(x, out, kind)
    tape = ad.Tape()
    leaves = tape_params(tape, params, trainable=False)
    zi = tape.input(z, name="z")
    o = forward_tape(spec, leaves, zi, mode="infer")
    dz = ad.input_gradient(tape, (o * ad.Tensor(g_out)).sum(), zi).data
    return loss, dz


def inversion_loss(gen: Network, x, z, config: InversionConfig) -> np.ndarray:
    x = np.atleast_2d(x)
    z = np.atleast_2d(z)
    out = forward(gen.spec, gen.params, z, mode="infer")
    recon, _ = _recon_loss_and_grad(x, out, config.recon)
    return recon + config.lambda_prior * _neg_log_prior(z)


def invert_generator(gen: Network, x, config: InversionConfig | None = None):
    """Latent code(s) whose generation best matches ``x``.

    ``x`` is one sample or a batch of rows (inverted independently).
    Returns ``(z_star, loss)``; the loss is the lowest value reached over
    every iterate of every restart.
    """
    config = config or InversionConfig()
    single = np.ndim(x) == 1
    x = np.atleast_2d(np.asarray(x, dtype=gen.params.dtype))
    if x.shape[1] != gen.spec.out_width:
        raise ValueError(f"sample width {x.shape[1]} != generator output width {gen.spec.out_width}")
    n, d = len(x), gen.spec.in_width
    rng = np.random.default_rng(config.seed)
    starts = rng.standard_normal((config.restarts, n, d)).astype(x.dtype)
    best_z = np.zeros((n, d), dtype=x.dtype)
    best_loss = np.full(n, np.inf)
    lam, lr = config.lambda_prior, config.step_size
    for r in range(config.restarts):
        z = np.ascontiguousarray(starts[r])
        for step in range(config.steps + 1):
            recon, dz = _generator_vjp(gen, z, config.recon, x)
            loss = recon + lam * _neg_log_prior(z)
            if not np.isfinite(loss).all():
                raise ad.NonFiniteError(f"non-finite inversion loss at restart {r}, step {step}")
            better = loss < best_loss
            best_loss = np.where(better, loss, best_loss)
            best_z[better] = z[better]
            if step == config.steps:
                break
            z = np.ascontiguousarray(z - lr * (dz + lam * z))
    if single:
        return best_z[0], float(best_loss[0])
    return best_z, best_loss


# --------------------------------------------------------------------------
# encoder
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EncoderConfig:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    hidden: tuple = (512, 256)
    activation: str = "leaky_relu"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


@dataclass
class EncoderBundle:
    encoder: Network
    generator: Network
    epoch_losses: list = field(default_factory=list)
    batch_losses: list = field(default_factory=list)

    def __post_init__(self):
        if self.encoder.spec.out_width != self.generator.spec.in_width:
            raise ValueError("encoder output width must equal generator latent width")
        if self.encoder.spec.in_width != self.generator.spec.out_width:
            raise ValueError("encoder input width must equal generator output width")

    def encode(self, x):
        return self.encoder(np.atleast_2d(x), mode="infer")


def encoder_spec(data_width: int, latent_dim: int, hidden=(512, 256),
                 activation: str = "leaky_relu") -> NetworkSpec:
    """Dense encoder ending in a batch-normalized linear layer."""
    return NetworkSpec.mlp([data_width, *hidden, latent_dim], hidden=activation,
                           output="identity", bn_output=True)


def train_encoder(generator: Network, data, config: EncoderConfig | None = None,
                  spec: NetworkSpec | None = None, rng=None) -> EncoderBundle:
    """Fit an encoder under the frozen generator by minimizing ``|G(E(x)) - x|^2``.

    The loss is the batch mean of per-sample squared error sums.  The
    generator's checksum is compared before and after training.
    """
    config = config or EncoderConfig()
    data = np.asarray(data, dtype=generator.params.dtype)
    if data.ndim != 2 or len(data) == 0:
        raise ValueError("training data must be a nonempty 2-D array")
    gspec = generator.spec
    if data.shape[1] != gspec.out_width:
        raise ValueError(f"data width {data.shape[1]} != generator output width {gspec.out_width}")
    spec = spec or encoder_spec(gspec.out_width, gspec.in_width, config.hidden, config.activation)
    if spec.out_width != gspec.in_width:
        raise ValueError("encoder output width must equal generator latent width")
    if not spec.layers[-1].batch_norm:
        raise ValueError("the encoder's last layer must be batch-normalized")

    if rng is None:
        rng = np.random.default_rng(config.seed)
    init_rng, batch_rng = rng.spawn(2)
    params = init_params(spec, init_rng, data.dtype)
    before = generator.params.checksum()
    opt = Adam(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    bundle = EncoderBundle(Network(spec, params), generator)
    n, m = len(data), config.batch_size
    per_epoch = max(1, n // m)
    for epoch in range(config.epochs):
        order = batch_rng.permutation(n)
        losses = []
        for b in range(per_epoch):
            x = data[order[b * m:(b + 1) * m]]
            tape = ad.Tape()
            e_leaves = tape_params(tape, params)
            g_leaves = tape_params(tape, generator.params, trainable=False)
            codes = forward_tape(spec, e_leaves, ad.Tensor(x), mode="train", params=params)
            recon = forward_tape(gspec, g_leaves, codes, mode="infer")
            diff = recon - ad.Tensor(x)
            loss = (diff * diff).sum(axis=1).mean()
            value = loss.item()
            if not math.isfinite(value):
                raise ad.NonFiniteError(f"non-finite encoder loss (epoch {epoch}, batch {b})")
            opt.step(params, ad.backward(tape, loss))
            losses.append(value)
        bundle.batch_losses.extend(losses)
        bundle.epoch_losses.append(float(np.mean(losses)))
    if generator.params.checksum() != before:
        raise GeneratorMutated("generator parameters changed during encoder training")
    return bundle


def reconstruct(bundle: EncoderBundle, x) -> np.ndarray:
    """``G(E(x))`` with both networks in inference mode."""
    x = np.atleast_2d(np.asarray(x, dtype=bundle.generator.params.dtype))
    if x.shape[1] != bundle.encoder.spec.in_width:
        raise ValueError("sample width does not match the encoder")
    return bundle.generator(bundle.encode(x), mode="infer")
