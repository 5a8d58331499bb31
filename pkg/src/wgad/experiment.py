"""Glue between an :class:`ExperimentConfig` and the library.

Every random stream is derived from ``run.seed`` by name (``data``,
``init/...``, ``training``, ``encoder``, ``inversion``) so components can
be re-seeded independently and re-running a command with the same config
rebuilds identical splits.
"""
from __future__ import annotations

import json
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__, checkpoint, datasets
from .config import ExperimentConfig
from .latent import EncoderBundle, EncoderConfig, InversionConfig, encoder_spec, train_encoder
from .nn import Network, NetworkSpec, ParamStore, init_params
from .training import GanConfig, TRAINERS, rng_stream


class DataError(RuntimeError):
    """Dataset missing or malformed."""


@dataclass
class ExperimentData:
    train: datasets.LabeledDataset
    test: datasets.LabeledDataset
    spec: datasets.GaussianMixtureSpec | None = None
    threshold: float | None = None
    source: str = ""


def toy_spec(cfg: ExperimentConfig) -> datasets.GaussianMixtureSpec:
    return datasets.GaussianMixtureSpec(cfg["dataset.k"], cfg["dataset.radius"], cfg["dataset.sigma"],
                                        cfg["dataset.phase"], cfg["run.seed"])


def _cap(train, cap, rng):
    if cap and len(train) > cap:
        keep = np.sort(rng.choice(len(train), cap, replace=False))
        return datasets.LabeledDataset(train.samples[keep], train.labels[keep], "train",
                                       train.note, None if train.classes is None else train.classes[keep],
                                       train.meta)
    return train


def _resolve_kind(cfg):
    kind, path = cfg["dataset.kind"], cfg["dataset.path"]
    if kind in ("mnist", "har") and not (path and os.path.exists(path)):
        if cfg["dataset.fallback"] == "bundled":
            return "mnist_sample" if kind == "mnist" else "har_synthetic"
        if not path:
            raise DataError(f"dataset.path must name the {kind.upper()} dataset directory")
        raise DataError(f"dataset path not found: {path}")
    return kind


def load_data(cfg: ExperimentConfig) -> ExperimentData:
    """Train and test splits for the configured dataset.

    With ``dataset.fallback = bundled`` a missing MNIST or HAR directory is
    replaced by the bundled MNIST sample or the synthetic HAR fixture, and
    ``source`` says so.
    """
    kind = _resolve_kind(cfg)
    seed = cfg["run.seed"]
    rng = rng_stream(seed, "data")
    try:
        if kind == "toy":
            spec = toy_spec(cfg)
            thr = datasets.density_threshold(spec)
            draw = rng.integers(0, 2**63 - 1, 3)
            x_train = datasets.sample_gaussian_mixture(spec, cfg["dataset.n"], seed=int(draw[0]))
            n_norm, n_abn = cfg["dataset.test_normal"], cfg["dataset.test_abnormal"]
            parts, labels = [], []
            if n_norm:
                parts.append(datasets.sample_gaussian_mixture(spec, n_norm, seed=int(draw[1])))
                labels.append(np.zeros(n_norm, np.int64))
            if n_abn:
                parts.append(datasets.sample_toy_anomalies(spec, n_abn, int(draw[2]),
                                                           cfg["dataset.anomaly_box"], thr))
                labels.append(np.ones(n_abn, np.int64))
            test_x = np.concatenate(parts) if parts else np.zeros((0, 2))
            test_y = np.concatenate(labels) if labels else np.zeros(0, np.int64)
            train = datasets.LabeledDataset(x_train, np.zeros(len(x_train), np.int64), "train", "toy mixture")
            test = datasets.LabeledDataset(test_x, test_y, "test", "toy held-out normals and level-set anomalies")
            return ExperimentData(train, test, spec, thr, "toy")

        if kind in ("mnist", "mnist_sample"):
            if kind == "mnist":
                images, labels = datasets.load_mnist(cfg["dataset.path"])
            else:
                sample_path = cfg["dataset.path"] if cfg["dataset.kind"] == "mnist_sample" else ""
                images, labels = datasets.load_mnist_sample(sample_path or None)
            if cfg["dataset.downsample"] > 1:
                images = datasets.downsample_images(images, cfg["dataset.downsample"])
            try:
                digit = int(cfg["dataset.abnormal"])
            except ValueError:
                raise DataError(f"dataset.abnormal must be a digit, got {cfg['dataset.abnormal']!r}") from None
            train, test = datasets.leave_one_digit_out_split(images, labels, digit, rng)
            return ExperimentData(_cap(train, cfg["dataset.max_train"], rng), test, source=kind)

        if kind in ("har", "har_synthetic"):
            if kind == "har":
                windows = datasets.load_har(cfg["dataset.path"])
            else:
                windows = datasets.synthetic_har(cfg["dataset.har_per_activity"], seed)
            train, test = datasets.har_anomaly_split(
                windows, cfg["dataset.abnormal"], rng, channels=list(cfg["dataset.channels"]) or None,
                transform=cfg["dataset.transform"])
            return ExperimentData(_cap(train, cfg["dataset.max_train"], rng), test, source=kind)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    raise DataError(f"unknown dataset kind {kind!r}")


def network_specs(cfg: ExperimentConfig, data_width: int):
    """Generator and critic specs; the critic's output is sigmoid for the standard GAN."""
    act = cfg["model.activation"]
    d_z = cfg["model.latent_dim"]
    gen = NetworkSpec.mlp([d_z, *cfg["model.gen_hidden"], data_width], hidden=act,
                          output=cfg["model.gen_output"], bn_hidden=cfg["model.gen_batch_norm"])
    out = "sigmoid" if cfg["training.variant"] == "gan" else "identity"
    critic = NetworkSpec.mlp([data_width, *cfg["model.critic_hidden"], 1], hidden=act, output=out)
    return gen, critic


def gan_config(cfg: ExperimentConfig) -> GanConfig:
    t = cfg.section("training")
    return GanConfig(variant=t["variant"], batch_size=t["batch_size"], k=t["k"], n_critic=t["n_critic"],
                     epochs=t["epochs"], latent_dim=cfg["model.latent_dim"], lambda_gp=t["lambda_gp"],
                     clip=t["clip"], optimizer=t["optimizer"], lr=t["lr"], beta1=t["beta1"],
                     beta2=t["beta2"], seed=cfg["run.seed"], precision=cfg["run.precision"],
                     backend=t["backend"], divergence_limit=t["divergence_limit"],
                     max_updates=t["max_updates"], snapshot_every=t["snapshot_every"])


def encoder_config(cfg: ExperimentConfig) -> EncoderConfig:
    e = cfg.section("encoder")
    return EncoderConfig(epochs=e["epochs"], batch_size=e["batch_size"], lr=e["lr"], beta1=e["beta1"],
                         beta2=e["beta2"], hidden=tuple(cfg["model.enc_hidden"]),
                         activation=cfg["model.activation"], seed=cfg["run.seed"])


def inversion_config(cfg: ExperimentConfig) -> InversionConfig:
    i = cfg.section("inversion")
    seed = int(rng_stream(cfg["run.seed"], "inversion").integers(0, 2**31 - 1))
    return InversionConfig(steps=i["steps"], step_size=i["step_size"], lambda_prior=i["lambda_prior"],
                           restarts=i["restarts"], recon=i["recon"], seed=seed)


def train_gan(cfg: ExperimentConfig, data: ExperimentData):
    gen, critic = network_specs(cfg, data.train.samples.shape[1])
    config = gan_config(cfg)
    return TRAINERS[config.variant](data.train.samples, gen, critic, config)


def fit_encoder(cfg: ExperimentConfig, generator: Network, data: ExperimentData) -> EncoderBundle:
    ec = encoder_config(cfg)
    spec = encoder_spec(generator.spec.out_width, generator.spec.in_width, ec.hidden, ec.activation)
    return train_encoder(generator, data.train.samples, ec, spec, rng=rng_stream(cfg["run.seed"], "encoder"))


# --------------------------------------------------------------------------
# checkpoints of whole models
# --------------------------------------------------------------------------


def store_from_tensors(tensors, prefix, spec: NetworkSpec, dtype):
    arrays = checkpoint.unpack_store(tensors, prefix)
    template = init_params(spec, 0, dtype)
    if set(arrays) != set(template.arrays):
        raise checkpoint.CheckpointError(f"checkpoint {prefix!r} tensors do not match the configured network")
    for name, arr in arrays.items():
        if arr.shape != template[name].shape:
            raise checkpoint.CheckpointError(
                f"width mismatch for {prefix}/{name}: checkpoint {arr.shape}, config {template[name].shape}")
    return ParamStore({k: np.ascontiguousarray(v, dtype=dtype) for k, v in arrays.items()},
                      template.trainable)


def load_network(path, prefix, spec: NetworkSpec, dtype=np.float64) -> Network:
    return Network(spec, store_from_tensors(checkpoint.load(path), prefix, spec, dtype))


# --------------------------------------------------------------------------
# manifests
# --------------------------------------------------------------------------


@dataclass
class RunManifest:
    command: str
    config_text: str = ""
    config_source: str = ""
    overrides: dict = field(default_factory=dict)
    checkpoints: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    version: str = __version__
    started: float = field(default_factory=time.time)
    finished: float = 0.0
    seconds: float = 0.0

    def write(self, directory) -> str:
        self.finished = time.time()
        self.seconds = self.finished - self.started
        path = os.path.join(directory, "manifest.json")
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".manifest-")
        try:
            with os.fdopen(fd, "w") as fh:
                json.dump(asdict(self), fh, indent=2, sort_keys=True, default=_jsonable)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        with open(path) as fh:
            return cls(**json.load(fh))


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)
