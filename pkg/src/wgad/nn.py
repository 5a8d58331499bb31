"""Dense feed-forward networks: architecture specs, parameters, forward passes.

Each layer is ``dense -> [batch norm] -> activation``.  Parameters live in a
:class:`ParamStore` under names like ``layer0.weight``; batch-norm layers add
``bn_scale``/``bn_shift`` (trainable) and ``bn_mean``/``bn_var`` (running
statistics).

Two evaluation paths exist: :func:`forward` runs on plain numpy arrays, and
:func:`forward_tape` records the same computation on an autodiff tape.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .kernels import ACT_CODES

HIDDEN_ACTIVATIONS = ("tanh", "sigmoid", "leaky_relu", "identity")
OUTPUT_ACTIVATIONS = ("identity", "sigmoid", "tanh")
BN_MOMENTUM = 0.99
BN_EPS = 1e-8


@dataclass(frozen=True)
class Layer:
    n_in: int
    n_out: int
    activation: str = "identity"
    batch_norm: bool = False


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[Layer, ...]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        for i, layer in enumerate(self.layers):
            if layer.n_in < 1 or layer.n_out < 1:
                raise ValueError(f"layer {i}: widths must be >= 1")
            allowed = OUTPUT_ACTIVATIONS if i == len(self.layers) - 1 else HIDDEN_ACTIVATIONS
            if layer.activation not in allowed:
                raise ValueError(f"layer {i}: activation {layer.activation!r} not in {allowed}")
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.n_out != b.n_in:
                raise ValueError(f"layers {i} and {i + 1}: widths {a.n_out} and {b.n_in} disagree")

    @classmethod
    def mlp(cls, widths, hidden="leaky_relu", output="identity",
            bn_hidden=False, bn_output=False) -> "NetworkSpec":
        """Stack of dense layers through the given widths."""
        widths = list(widths)
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        layers = []
        last = len(widths) - 2
        for i, (a, b) in enumerate(zip(widths, widths[1:])):
            layers.append(Layer(a, b, output if i == last else hidden,
                                bn_output if i == last else bn_hidden))
        return cls(tuple(layers))

    @property
    def in_width(self) -> int:
        return self.layers[0].n_in

    @property
    def out_width(self) -> int:
        return self.layers[-1].n_out

    @property
    def output_activation(self) -> str:
        return self.layers[-1].activation

    @property
    def widths(self) -> list[int]:
        return [self.layers[0].n_in] + [l.n_out for l in self.layers]

    @property
    def has_batch_norm(self) -> bool:
        return any(l.batch_norm for l in self.layers)

    def act_codes(self) -> tuple[int, ...]:
        return tuple(ACT_CODES[l.activation] for l in self.layers)


class ParamStore:
    """Named parameter arrays of one network.

    ``trainable`` lists the names optimizers update; running batch-norm
    statistics are stored alongside but are not trainable.
    """

    def __init__(self, arrays: dict[str, np.ndarray], trainable: list[str]):
        self.arrays = dict(arrays)
        self.trainable = list(trainable)

    def __getitem__(self, name):
        return self.arrays[name]

    def __setitem__(self, name, value):
        if name in self.arrays and np.shape(value) != self.arrays[name].shape:
            raise ValueError(f"shape change for {name}: {self.arrays[name].shape} -> {np.shape(value)}")
        self.arrays[name] = value

    def __contains__(self, name):
        return name in self.arrays

    def __iter__(self):
        return iter(self.arrays)

    def __len__(self):
        return len(self.arrays)

    def items(self):
        return self.arrays.items()

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self.arrays.items()}, self.trainable)

    def astype(self, dtype) -> "ParamStore":
        return ParamStore({k: np.ascontiguousarray(v, dtype=dtype) for k, v in self.arrays.items()},
                          self.trainable)

    @property
    def dtype(self):
        return next(iter(self.arrays.values())).dtype

    def checksum(self) -> int:
        """CRC32 over names and raw bytes, for detecting mutation."""
        crc = 0
        for name in sorted(self.arrays):
            crc = zlib.crc32(name.encode(), crc)
            crc = zlib.crc32(np.ascontiguousarray(self.arrays[name]).tobytes(), crc)
        return crc

    def weights_biases(self):
        n = sum(1 for k in self.arrays if k.endswith(".weight"))
        return ([self.arrays[f"layer{i}.weight"] for i in range(n)],
                [self.arrays[f"layer{i}.bias"] for i in range(n)])


def init_params(spec: NetworkSpec, seed, dtype=np.float64) -> ParamStore:
    """Glorot-uniform weights, zero biases, unit batch-norm scale.

    ``seed`` is an int or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    arrays, trainable = {}, []
    for i, layer in enumerate(spec.layers):
        limit = np.sqrt(6.0 / (layer.n_in + layer.n_out))
        arrays[f"layer{i}.weight"] = rng.uniform(-limit, limit, (layer.n_in, layer.n_out)).astype(dtype)
        arrays[f"layer{i}.bias"] = np.zeros(layer.n_out, dtype=dtype)
        trainable += [f"layer{i}.weight", f"layer{i}.bias"]
        if layer.batch_norm:
            arrays[f"layer{i}.bn_scale"] = np.ones(layer.n_out, dtype=dtype)
            arrays[f"layer{i}.bn_shift"] = np.zeros(layer.n_out, dtype=dtype)
            arrays[f"layer{i}.bn_mean"] = np.zeros(layer.n_out, dtype=dtype)
            arrays[f"layer{i}.bn_var"] = np.ones(layer.n_out, dtype=dtype)
            trainable += [f"layer{i}.bn_scale", f"layer{i}.bn_shift"]
    return ParamStore(arrays, trainable)


def _np_act(name, a):
    if name == "identity":
        return a
    if name == "tanh":
        return np.tanh(a)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * a))
    return np.where(a >= 0, a, ad.LEAKY_SLOPE * a)


_TAPE_ACTS = {
    "identity": lambda t: t,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "leaky_relu": ad.leaky_relu,
}


def _check_width(spec, x):
    if x.ndim != 2 or x.shape[1] != spec.in_width:
        raise ValueError(f"batch of shape {x.shape} does not match input width {spec.in_width}")


def forward(spec: NetworkSpec, params: ParamStore, batch, mode: str = "infer",
            return_hidden: bool = False, skip_output_activation: bool = False):
    """Row-wise network output for a 2-D numpy batch.

    In ``train`` mode batch norm normalizes with minibatch statistics and
    updates the running statistics in ``params``; in ``infer`` mode it uses
    the running statistics.  ``return_hidden`` also returns the activations
    entering the last layer.  ``skip_output_activation`` returns the final
    pre-activation (logits for a sigmoid output).
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    h = np.asarray(batch)
    _check_width(spec, h)
    hidden = h
    last = len(spec.layers) - 1
    for i, layer in enumerate(spec.layers):
        if i == last:
            hidden = h
        a = h @ params[f"layer{i}.weight"] + params[f"layer{i}.bias"]
        if layer.batch_norm:
            a = _bn_numpy(params, i, a, mode)
        if i == last and skip_output_activation:
            h = a
        else:
            h = _np_act(layer.activation, a)
    if not np.isfinite(h).all():
        raise ad.NonFiniteError("network produced non-finite activations")
    return (h, hidden) if return_hidden else h


def _bn_numpy(params, i, a, mode):
    p = f"layer{i}."
    if mode == "train":
        mu = a.mean(axis=0)
        var = ((a - mu) ** 2).mean(axis=0)
        params[p + "bn_mean"] = BN_MOMENTUM * params[p + "bn_mean"] + (1 - BN_MOMENTUM) * mu
        params[p + "bn_var"] = BN_MOMENTUM * params[p + "bn_var"] + (1 - BN_MOMENTUM) * var
    else:
        mu, var = params[p + "bn_mean"], params[p + "bn_var"]
    return (a - mu) / np.sqrt(var + BN_EPS) * params[p + "bn_scale"] + params[p + "bn_shift"]


def tape_params(tape: ad.Tape, params: ParamStore, prefix: str = "", trainable: bool = True):
    """Expose a store on ``tape``: parameter leaves, or constants when frozen."""
    leaves = {}
    for name, value in params.items():
        if trainable and name in params.trainable:
            leaves[name] = tape.param(prefix + name, value)
        else:
            leaves[name] = ad.Tensor(value)
    return leaves


def forward_tape(spec: NetworkSpec, leaves: dict, x: ad.Tensor, mode: str = "train",
                 params: ParamStore | None = None, return_hidden: bool = False,
                 skip_output_activation: bool = False):
    """Same computation as :func:`forward`, recorded on a tape.

    ``leaves`` comes from :func:`tape_params`.  Running batch-norm statistics
    are read from and, in train mode, written to ``params``.
    """
    if x.ndim != 2 or x.shape[1] != spec.in_width:
        raise ValueError(f"batch of shape {x.shape} does not match input width {spec.in_width}")
    h = x
    hidden = x
    last = len(spec.layers) - 1
    for i, layer in enumerate(spec.layers):
        if i == last:
            hidden = h
        a = h @ leaves[f"layer{i}.weight"] + leaves[f"layer{i}.bias"]
        if layer.batch_norm:
            a = _bn_tape(leaves, params, i, a, mode)
        if not (i == last and skip_output_activation):
            a = _TAPE_ACTS[layer.activation](a)
        h = a
    return (h, hidden) if return_hidden else h


def _bn_tape(leaves, params, i, a, mode):
    p = f"layer{i}."
    if mode == "train":
        mu = a.mean(axis=0, keepdims=True)
        centered = a - mu
        var = (centered * centered).mean(axis=0, keepdims=True)
        normed = centered / ad.sqrt(var + BN_EPS)
        if params is not None:
            params[p + "bn_mean"] = (BN_MOMENTUM * params[p + "bn_mean"]
                                     + (1 - BN_MOMENTUM) * mu.data.reshape(-1))
            params[p + "bn_var"] = (BN_MOMENTUM * params[p + "bn_var"]
                                    + (1 - BN_MOMENTUM) * var.data.reshape(-1))
    else:
        std = ad.Tensor(np.sqrt(leaves[p + "bn_var"].data + BN_EPS))
        normed = (a - leaves[p + "bn_mean"]) / std
    return normed * leaves[p + "bn_scale"] + leaves[p + "bn_shift"]


@dataclass
class Network:
    """A spec together with its parameters."""

    spec: NetworkSpec
    params: ParamStore

    def __call__(self, batch, mode: str = "infer"):
        return forward(self.spec, self.params, batch, mode=mode)

    def hidden(self, batch):
        """Activations entering the last layer (infer mode)."""
        return forward(self.spec, self.params, batch, mode="infer", return_hidden=True)[1]
