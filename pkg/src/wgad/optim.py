"""Adam, RMSprop and weight clipping over :class:`~wgad.nn.ParamStore` objects.

Optimizers keep their accumulators keyed by parameter name and update the
store in place.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import ParamStore


def _check_shapes(params: ParamStore, grads: dict):
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != params[name].shape:
            raise ValueError(f"gradient shape {np.shape(g)} != parameter shape "
                             f"{params[name].shape} for {name!r}")


@dataclass
class Adam:
    """Bias-corrected Adam in the ``lr_t = lr * sqrt(1 - b2^t) / (1 - b1^t)`` form.

    Defaults are the WGAN-GP settings (1e-4, 0.5, 0.9).
    """

    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: ParamStore, grads: dict) -> None:
        _check_shapes(params, grads)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * np.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            step = lr_t * m / (np.sqrt(v) + self.eps)
            params[name] = params[name] - step.astype(params[name].dtype, copy=False)


@dataclass
class RMSprop:
    """Mean-square scaled gradient descent; default lr 5e-5 as for clipped WGAN."""

    lr: float = 5e-5
    rho: float = 0.9
    eps: float = 1e-8
    t: int = 0
    acc: dict = field(default_factory=dict)

    def step(self, params: ParamStore, grads: dict) -> None:
        _check_shapes(params, grads)
        self.t += 1
        for name, g in grads.items():
            if name not in self.acc:
                self.acc[name] = np.zeros_like(params[name])
            a = self.acc[name]
            a *= self.rho
            a += (1.0 - self.rho) * (g * g)
            step = self.lr * g / np.sqrt(a + self.eps)
            params[name] = params[name] - step.astype(params[name].dtype, copy=False)


def weight_clip(params: ParamStore, c: float) -> ParamStore:
    """Clamp every trainable array of ``params`` into ``[-c, c]`` in place."""
    if c <= 0:
        raise ValueError("clip bound must be positive")
    for name in params.trainable:
        np.clip(params[name], -c, c, out=params[name])
    return params


def make_optimizer(name: str, **hyper):
    if name == "adam":
        return Adam(**hyper)
    if name == "rmsprop":
        return RMSprop(**hyper)
    raise ValueError(f"unknown optimizer {name!r}")
