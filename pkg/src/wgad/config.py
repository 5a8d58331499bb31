"""Flat ``section.key = value`` experiment configuration.

Every key is declared in :data:`SCHEMA` with a type and default; unknown
keys, duplicates and malformed values raise :class:`ConfigError`.  Lines
starting with ``#`` or ``;`` are comments.
"""
from __future__ import annotations

from dataclasses import dataclass

VARIANTS = ("gan", "wgan_clip", "wgan_gp")
ACTIVATIONS = ("leaky_relu", "tanh", "sigmoid", "identity")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def _int_list(text):
    text = text.strip()
    if not text:
        return ()
    return tuple(int(v) for v in text.split(","))


def _str_list(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text):
    text = text.strip()
    return None if text in ("", "none") else int(text)


def _opt_float(text):
    text = text.strip()
    return None if text in ("", "none") else float(text)


def _opt_str(text):
    text = text.strip()
    return None if text in ("", "none") else text


def _choice(*options):
    def parse(text):
        v = text.strip()
        if v not in options:
            raise ValueError(f"{v!r} not in {options}")
        return v
    return parse


@dataclass(frozen=True)
class Field:
    parse: object
    default: object
    check: object = None
    doc: str = ""


def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


SCHEMA: dict[str, Field] = {
    # global
    "run.seed": Field(int, 0, _nonneg, "global seed for every random stream"),
    "run.precision": Field(_choice("f64", "f32"), "f64"),
    "run.name": Field(str, "run"),
    # dataset
    "dataset.kind": Field(_choice("toy", "mnist", "mnist_sample", "har", "har_synthetic"), "toy"),
    "dataset.path": Field(str, ""),
    "dataset.fallback": Field(_choice("none", "bundled"), "none", None,
                              "use the bundled MNIST sample / synthetic HAR when dataset.path is absent"),
    "dataset.n": Field(int, 100000, _pos, "toy training sample count"),
    "dataset.k": Field(int, 7, _pos),
    "dataset.radius": Field(float, 1.0, _pos),
    "dataset.sigma": Field(float, 0.05, _pos),
    "dataset.phase": Field(float, 0.0),
    "dataset.test_normal": Field(int, 1000, _nonneg),
    "dataset.test_abnormal": Field(int, 1000, _nonneg),
    "dataset.anomaly_box": Field(float, 2.0, _pos),
    "dataset.abnormal": Field(str, "0", None, "digit or activity name held out as anomalous"),
    "dataset.downsample": Field(int, 1, _pos),
    "dataset.max_train": Field(int, 0, _nonneg, "cap on training samples (0 = no cap)"),
    "dataset.channels": Field(_str_list, (), None, "HAR channel subset, e.g. total_acc"),
    "dataset.transform": Field(_choice("raw", "recurrence"), "raw"),
    "dataset.har_per_activity": Field(int, 60, _pos, "windows per activity for the synthetic HAR fixture"),
    # model
    "model.latent_dim": Field(int, 2, _pos),
    "model.gen_hidden": Field(_int_list, (128, 128)),
    "model.critic_hidden": Field(_int_list, (128, 128)),
    "model.enc_hidden": Field(_int_list, (512, 256)),
    "model.activation": Field(_choice(*ACTIVATIONS), "leaky_relu"),
    "model.gen_output": Field(_choice("identity", "sigmoid", "tanh"), "identity"),
    "model.gen_batch_norm": Field(_bool, False),
    # training
    "training.variant": Field(_choice(*VARIANTS), "wgan_gp"),
    "training.batch_size": Field(int, 64, _pos),
    "training.k": Field(int, 1, _pos),
    "training.n_critic": Field(int, 5, _pos),
    "training.epochs": Field(int, 30, _nonneg),
    "training.lambda_gp": Field(float, 10.0, _nonneg),
    "training.clip": Field(float, 0.01, _pos),
    "training.optimizer": Field(_opt_str, None),
    "training.lr": Field(_opt_float, None),
    "training.beta1": Field(float, 0.5),
    "training.beta2": Field(float, 0.9),
    "training.backend": Field(_choice("auto", "kernel", "tape"), "auto"),
    "training.divergence_limit": Field(float, 1e6, _pos),
    "training.max_updates": Field(_opt_int, None),
    "training.snapshot_every": Field(int, 0, _nonneg),
    # encoder
    "encoder.epochs": Field(int, 10, _nonneg),
    "encoder.batch_size": Field(int, 64, _pos),
    "encoder.lr": Field(float, 1e-4, _pos),
    "encoder.beta1": Field(float, 0.5),
    "encoder.beta2": Field(float, 0.9),
    # scoring
    "scorer.id": Field(_choice("critic", "anogan", "bigan", "encoder_mse"), "encoder_mse"),
    "scorer.lambda_mix": Field(float, 0.1, lambda v: 0 <= v <= 1),
    "scorer.alpha_mix": Field(float, 0.5, lambda v: 0 <= v <= 1),
    # inversion
    "inversion.steps": Field(int, 400, _pos),
    "inversion.step_size": Field(float, 0.01, _pos),
    "inversion.lambda_prior": Field(float, 0.1, _nonneg),
    "inversion.restarts": Field(int, 3, _pos),
    "inversion.recon": Field(_choice("mse", "bce"), "mse"),
}


class ExperimentConfig:
    """Validated configuration; read keys with ``cfg["section.key"]``."""

    def __init__(self, values: dict, text: str = "", source: str = "<string>"):
        self.values = values
        self.text = text
        self.source = source

    def __getitem__(self, key):
        return self.values[key]

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.values == other.values

    def section(self, name: str) -> dict:
        head = name + "."
        return {k[len(head):]: v for k, v in self.values.items() if k.startswith(head)}

    def with_overrides(self, **flat) -> "ExperimentConfig":
        values = dict(self.values)
        for key, value in flat.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown key {key!r}")
            values[key] = value
        return ExperimentConfig(values, self.text, self.source)

    def explicit(self) -> dict:
        """Keys that differ from their defaults."""
        return {k: v for k, v in self.values.items() if v != SCHEMA[k].default}


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    values = {k: f.default for k, f in SCHEMA.items()}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        field_ = SCHEMA[key]
        try:
            parsed = field_.parse(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
        if field_.check is not None and not field_.check(parsed):
            raise ConfigError(f"{source}:{lineno}: value {value!r} out of range for {key}")
        values[key] = parsed
    return ExperimentConfig(values, text, source)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))
