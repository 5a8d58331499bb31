"""Anomaly scores; larger always means more anomalous.

Feature matching uses the critic's last hidden layer, and the distances
in the residual and feature terms are sums of absolute differences.
"""
from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .latent import EncoderBundle, reconstruct
from .nn import Network

SCORERS = ("critic", "anogan", "bigan", "encoder_mse")


@dataclass
class ScoreReport:
    scores: np.ndarray
    labels: np.ndarray
    scorer: str
    model: str
    sample_ids: np.ndarray | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(self.scores) != len(self.labels):
            raise ValueError("scores and labels differ in length")
        if not np.isfinite(self.scores).all():
            raise ValueError("scores must be finite")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        if self.sample_ids is None:
            self.sample_ids = np.arange(len(self.scores))

    def __len__(self):
        return len(self.scores)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample_id", "score", "label", "scorer", "model"])
            for i, s, y in zip(self.sample_ids, self.scores, self.labels):
                w.writerow([int(i), repr(float(s)), int(y), self.scorer, self.model])

    @classmethod
    def from_csv(cls, path) -> "ScoreReport":
        ids, scores, labels, scorer, model = [], [], [], "", ""
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = {"sample_id", "score", "label", "scorer", "model"} - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"report lacks columns {sorted(missing)}")
            for rec in reader:
                ids.append(int(rec["sample_id"]))
                scores.append(float(rec["score"]))
                labels.append(int(rec["label"]))
                scorer, model = rec["scorer"], rec["model"]
        return cls(np.array(scores), np.array(labels, dtype=np.int64), scorer, model, np.array(ids))


@dataclass(frozen=True)
class CriticInterval:
    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ValueError(f"lower {self.lower} exceeds upper {self.upper}")


def _critic_out(critic: Network, x):
    return critic(np.atleast_2d(x), mode="infer")[:, 0]


def fit_critic_interval(critic: Network, data) -> CriticInterval:
    """Exact min and max of the critic output over ``data``."""
    data = np.asarray(data)
    if data.ndim != 2 or len(data) == 0:
        raise ValueError("training data must be a nonempty 2-D array")
    out = _critic_out(critic, data)
    return CriticInterval(float(out.min()), float(out.max()))


def interval_distance(values, interval: CriticInterval) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return np.maximum(np.maximum(interval.lower - v, v - interval.upper), 0.0)


def critic_score(critic: Network, interval: CriticInterval, x) -> np.ndarray:
    """Distance of the critic output from the training interval (0 inside)."""
    return interval_distance(_critic_out(critic, x), interval)


def _check_mix(name, value):
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")


def mix_scores(first, second, weight: float) -> np.ndarray:
    """``weight * first + (1 - weight) * second``."""
    _check_mix("mixing coefficient", weight)
    return weight * np.asarray(first, dtype=np.float64) + (1.0 - weight) * np.asarray(second, dtype=np.float64)


def residual_loss(x, recon) -> np.ndarray:
    return np.abs(np.atleast_2d(x) - np.atleast_2d(recon)).sum(axis=1)


def feature_loss(critic: Network, x, recon) -> np.ndarray:
    return np.abs(critic.hidden(np.atleast_2d(x)) - critic.hidden(np.atleast_2d(recon))).sum(axis=1)


def anogan_score(x, z_star, generator: Network, critic: Network, lambda_mix: float) -> np.ndarray:
    """``lambda_mix * feature + (1 - lambda_mix) * residual`` at ``G(z_star)``."""
    _check_mix("lambda_mix", lambda_mix)
    recon = generator(np.atleast_2d(z_star), mode="infer")
    return mix_scores(feature_loss(critic, x, recon), residual_loss(x, recon), lambda_mix)


def bigan_style_score(x, bundle: EncoderBundle, critic: Network, alpha_mix: float) -> np.ndarray:
    """``alpha_mix * |x - G(E(x))| + (1 - alpha_mix) * feature distance``."""
    _check_mix("alpha_mix", alpha_mix)
    recon = reconstruct(bundle, x)
    return mix_scores(residual_loss(x, recon), feature_loss(critic, x, recon), alpha_mix)


def encoder_mse_score(bundle: EncoderBundle, x) -> np.ndarray:
    """Per-sample mean squared reconstruction error through ``G(E(x))``."""
    x = np.atleast_2d(x)
    diff = x - reconstruct(bundle, x)
    return (diff * diff).mean(axis=1)


def worker_count() -> int:
    """Scoring threads, capped by ``WGAD_THREADS`` (default 1)."""
    raw = os.environ.get("WGAD_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"WGAD_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def score_in_chunks(fn, x, threads: int | None = None, chunk: int = 512) -> np.ndarray:
    """Apply a row-wise scorer over chunks of ``x``, optionally in threads.

    Chunks are reassembled in order so results do not depend on the
    thread count.
    """
    x = np.atleast_2d(x)
    threads = threads or worker_count()
    parts = [x[i:i + chunk] for i in range(0, len(x), chunk)]
    if threads == 1 or len(parts) <= 1:
        out = [fn(p) for p in parts]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(fn, parts))
    return np.concatenate(out) if out else np.zeros(0)
