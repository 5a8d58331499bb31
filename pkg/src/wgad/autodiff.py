"""Tape-based reverse-mode differentiation over dense numpy arrays.

A :class:`Tape` records every primitive operation applied to tensors that
descend from its leaves (parameters, inputs).  :func:`backward` sweeps the
tape in reverse to produce parameter gradients, and :func:`input_gradient`
performs the same sweep *while recording*, so the returned gradient is itself
an expression on the tape and can be differentiated again.  That second-order
path is what the gradient penalty of WGAN-GP needs.

Example
-------
>>> tape = Tape()
>>> w = tape.param("w", np.array(3.0))
>>> backward(tape, w * w)["w"]
array(6.)
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, NamedTuple

import numpy as np

LEAKY_SLOPE = 0.2


class NonFiniteError(FloatingPointError):
    """A NaN or infinity appeared in a value or an accumulated gradient."""


class NoDerivativeError(ValueError):
    """An operation without a registered derivative lies on a gradient path."""


class Tensor:
    """Immutable dense array, optionally attached to a tape.

    ``tid`` is the index of the node that produced the tensor on its tape;
    it is ``None`` for constants, which never receive gradients.
    """

    __slots__ = ("data", "tape", "tid", "kind", "name")
    __array_priority__ = 1000

    def __init__(self, data, tape=None, tid=None, kind="const", name=None):
        self.data = data
        self.tape = tape
        self.tid = tid
        self.kind = kind
        self.name = name

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor<{self.kind}{label} shape={self.shape}>"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return apply("transpose", self)

    def item(self):
        return self.data.item()

    def __add__(self, other):
        return apply("add", self, other)

    def __radd__(self, other):
        return apply("add", other, self)

    def __sub__(self, other):
        return apply("sub", self, other)

    def __rsub__(self, other):
        return apply("sub", other, self)

    def __mul__(self, other):
        return apply("mul", self, other)

    def __rmul__(self, other):
        return apply("mul", other, self)

    def __truediv__(self, other):
        return apply("div", self, other)

    def __rtruediv__(self, other):
        return apply("div", other, self)

    def __neg__(self):
        return apply("neg", self)

    def __matmul__(self, other):
        return apply("matmul", self, other)

    def __rmatmul__(self, other):
        return apply("matmul", other, self)

    def __pow__(self, p):
        return apply("pow", self, p=float(p))

    def sum(self, axis=None, keepdims=False):
        return apply("sum", self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.size if axis is None else self.shape[axis]
        return apply("sum", self, axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return apply("reshape", self, shape=tuple(shape))


class _Node:
    __slots__ = ("op", "inputs", "attrs", "out")

    def __init__(self, op, inputs, attrs, out):
        self.op = op
        self.inputs = inputs
        self.attrs = attrs
        self.out = out


class Tape:
    """Computation record: leaves and primitive operations in execution order.

    The node list is topologically ordered by construction.  A tape belongs
    to one thread of execution and is meant to be rebuilt per minibatch.
    """

    def __init__(self, check_finite: bool = True):
        self.nodes: list[_Node] = []
        self.params: dict[str, Tensor] = {}
        self.inputs: list[Tensor] = []
        self.recording = True
        self.check_finite = check_finite

    def __len__(self):
        return len(self.nodes)

    def _leaf(self, value, kind, name):
        data = np.asarray(value)
        if self.check_finite and not np.isfinite(data).all():
            raise NonFiniteError(f"{kind} leaf {name!r} holds non-finite values")
        t = Tensor(data, self, len(self.nodes), kind, name)
        self.nodes.append(_Node(kind, (), {}, t))
        return t

    def param(self, name: str, value) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = self._leaf(value, "param", name)
        self.params[name] = t
        return t

    def input(self, value, name: str | None = None) -> Tensor:
        t = self._leaf(value, "input", name)
        self.inputs.append(t)
        return t

    @contextlib.contextmanager
    def paused(self):
        """Evaluate operations without recording them."""
        prev, self.recording = self.recording, False
        try:
            yield self
        finally:
            self.recording = prev

    def replay(self) -> float:
        """Recompute every recorded operation from its recorded inputs.

        Returns the largest absolute deviation from the stored outputs; an
        intact tape replays to exactly ``0.0``.
        """
        worst = 0.0
        for node in self.nodes:
            if node.op in ("param", "input"):
                continue
            spec = OPS[node.op]
            out = spec.forward(*(t.data for t in node.inputs), **node.attrs)
            if out.shape != node.out.data.shape:
                return float("inf")
            if out.size:
                worst = max(worst, float(np.max(np.abs(out - node.out.data))))
        return worst


class OpSpec(NamedTuple):
    forward: Callable
    vjp: Callable | None


OPS: dict[str, OpSpec] = {}


def register(name: str, forward: Callable, vjp: Callable | None) -> None:
    OPS[name] = OpSpec(forward, vjp)


def _as_tensor(x, like_dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like_dtype))


def apply(op: str, *args, **attrs) -> Tensor:
    """Evaluate primitive ``op`` and record it if any argument is on a tape."""
    tape = None
    dtype = np.float64
    for a in args:
        if isinstance(a, Tensor):
            dtype = a.data.dtype
            if a.tape is not None:
                if tape is not None and a.tape is not tape:
                    raise ValueError("operands belong to different tapes")
                tape = a.tape
    inputs = tuple(_as_tensor(a, dtype) for a in args)
    out = OPS[op].forward(*(t.data for t in inputs), **attrs)
    if tape is not None and tape.check_finite and not np.isfinite(out).all():
        raise NonFiniteError(f"operation {op!r} produced non-finite values")
    if tape is None or not tape.recording or all(t.tid is None for t in inputs):
        return Tensor(out)
    t = Tensor(out, tape, len(tape.nodes), "op")
    tape.nodes.append(_Node(op, inputs, attrs, t))
    return t


# --------------------------------------------------------------------------
# primitive operations
# --------------------------------------------------------------------------


def _sum_to_shape(x, shape):
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    if lead:
        x = x.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and x.shape[i] != 1)
    if axes:
        x = x.sum(axis=axes, keepdims=True)
    return x.reshape(shape)


def sum_to(g: Tensor, shape) -> Tensor:
    return g if g.shape == shape else apply("sum_to", g, shape=shape)


def broadcast_to(g: Tensor, shape) -> Tensor:
    return g if g.shape == shape else apply("broadcast_to", g, shape=shape)


def _vjp_add(g, ins, out):
    a, b = ins
    return sum_to(g, a.shape), sum_to(g, b.shape)


def _vjp_sub(g, ins, out):
    a, b = ins
    return sum_to(g, a.shape), -sum_to(g, b.shape)


def _vjp_mul(g, ins, out):
    a, b = ins
    return sum_to(g * b, a.shape), sum_to(g * a, b.shape)


def _vjp_div(g, ins, out):
    a, b = ins
    return sum_to(g / b, a.shape), sum_to(-(g * out) / b, b.shape)


def _vjp_matmul(g, ins, out):
    a, b = ins
    return g @ b.T, a.T @ g


def _vjp_sum(g, ins, out, axis, keepdims):
    (a,) = ins
    if axis is not None and not keepdims:
        shape = list(a.shape)
        shape[axis] = 1
        g = g.reshape(tuple(shape))
    elif axis is None:
        g = g.reshape((1,) * a.ndim)
    return (broadcast_to(g, a.shape),)


def _vjp_leaky(g, ins, out, slope):
    (a,) = ins
    # right-hand derivative at the kink
    return (g * Tensor(np.where(a.data >= 0, 1.0, slope).astype(a.data.dtype)),)


def _vjp_pow(g, ins, out, p):
    (a,) = ins
    if p == 2.0:
        return (g * (2.0 * a),)
    return (g * (p * (a ** (p - 1.0))),)


def _leaky_forward(a, slope):
    return np.where(a >= 0, a, slope * a)


def _sigmoid(a):
    # split by sign to avoid overflow in exp
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _softplus(a):
    return np.maximum(a, 0) + np.log1p(np.exp(-np.abs(a)))


register("add", np.add, _vjp_add)
register("sub", np.subtract, _vjp_sub)
register("mul", np.multiply, _vjp_mul)
register("div", np.divide, _vjp_div)
register("neg", np.negative, lambda g, ins, out: (-g,))
register("matmul", np.matmul, _vjp_matmul)
register("transpose", np.transpose, lambda g, ins, out: (g.T,))
register("reshape", lambda a, shape: a.reshape(shape),
         lambda g, ins, out, shape: (g.reshape(ins[0].shape),))
register("sum", lambda a, axis, keepdims: np.sum(a, axis=axis, keepdims=keepdims), _vjp_sum)
register("sum_to", _sum_to_shape,
         lambda g, ins, out, shape: (broadcast_to(g, ins[0].shape),))
register("broadcast_to", lambda a, shape: np.ascontiguousarray(np.broadcast_to(a, shape)),
         lambda g, ins, out, shape: (sum_to(g, ins[0].shape),))
register("tanh", np.tanh, lambda g, ins, out: (g * (1.0 - out * out),))
register("sigmoid", _sigmoid, lambda g, ins, out: (g * (out * (1.0 - out)),))
register("leaky_relu", _leaky_forward, _vjp_leaky)
register("exp", np.exp, lambda g, ins, out: (g * out,))
register("log", np.log, lambda g, ins, out: (g / ins[0],))
register("sqrt", np.sqrt, lambda g, ins, out: (g / (2.0 * out),))
register("abs", np.abs,
         lambda g, ins, out: (g * Tensor(np.sign(ins[0].data)),))
register("softplus", _softplus, lambda g, ins, out: (g * sigmoid(ins[0]),))
register("pow", lambda a, p: np.power(a, p), _vjp_pow)
register("step", lambda a: (a >= 0).astype(a.dtype), None)


def tanh(x):
    return apply("tanh", x)


def sigmoid(x):
    return apply("sigmoid", x)


def leaky_relu(x, slope: float = LEAKY_SLOPE):
    return apply("leaky_relu", x, slope=slope)


def exp(x):
    return apply("exp", x)


def log(x):
    return apply("log", x)


def sqrt(x):
    return apply("sqrt", x)


def absolute(x):
    return apply("abs", x)


def softplus(x):
    return apply("softplus", x)


def step(x):
    """Heaviside step; deliberately has no derivative."""
    return apply("step", x)


# --------------------------------------------------------------------------
# reverse sweeps
# --------------------------------------------------------------------------


def _reverse(tape: Tape, output: Tensor, targets: Iterable[int], create_graph: bool):
    if output.tape is not tape or output.tid is None:
        raise ValueError("output was not produced by this tape")
    if output.size != 1:
        raise ValueError(f"output must be a scalar, got shape {output.shape}")
    targets = set(targets)
    nodes = tape.nodes[: output.tid + 1]

    needs = set(targets)
    for node in nodes:
        if node.inputs and any(t.tid in needs for t in node.inputs):
            needs.add(node.out.tid)
    found: dict[int, Tensor] = {}
    if output.tid not in needs:
        return found

    adj = {output.tid: Tensor(np.ones_like(output.data))}
    prev, tape.recording = tape.recording, create_graph
    try:
        for node in reversed(nodes):
            g = adj.pop(node.out.tid, None)
            if g is None:
                continue
            if node.out.tid in targets:
                found[node.out.tid] = g
            if not node.inputs:
                continue
            vjp = OPS[node.op].vjp
            if vjp is None:
                raise NoDerivativeError(f"operation {node.op!r} has no derivative")
            grads = vjp(g, node.inputs, node.out, **node.attrs)
            for inp, gi in zip(node.inputs, grads):
                if gi is None or inp.tid not in needs:
                    continue
                prev_g = adj.get(inp.tid)
                gi = gi if prev_g is None else prev_g + gi
                if tape.check_finite and not np.isfinite(gi.data).all():
                    raise NonFiniteError(
                        f"non-finite gradient while back-propagating through {node.op!r}"
                    )
                adj[inp.tid] = gi
    finally:
        tape.recording = prev
    return found


def backward(tape: Tape, output: Tensor) -> dict[str, np.ndarray]:
    """Gradients of scalar ``output`` with respect to every parameter leaf.

    Parameters that do not influence ``output`` get exact zeros.
    """
    by_tid = {t.tid: name for name, t in tape.params.items()}
    found = _reverse(tape, output, by_tid, create_graph=False)
    grads = {}
    for name, t in tape.params.items():
        g = found.get(t.tid)
        grads[name] = np.zeros_like(t.data) if g is None else np.array(g.data, copy=True)
    return grads


def input_gradient(tape: Tape, output: Tensor, inp: Tensor) -> Tensor:
    """Gradient of ``output`` w.r.t. ``inp``, recorded on the tape.

    The result can enter further computation whose parameter gradients are
    then available through :func:`backward` (double backprop).
    """
    if inp.tape is not tape or inp.kind != "input":
        raise ValueError("inp must be an input leaf of this tape")
    found = _reverse(tape, output, [inp.tid], create_graph=True)
    g = found.get(inp.tid)
    if g is None:
        return Tensor(np.zeros_like(inp.data))
    return g


def finite_diff_check(fn, point: dict, step: float = 1e-6, analytic: dict | None = None,
                      oracle_dtype=np.longdouble) -> float:
    """Worst relative error between reverse-mode and central-difference gradients.

    ``fn(tape, params)`` builds a scalar from a dict of parameter tensors.
    The analytic side is ``backward`` on a 64-bit tape unless ``analytic`` is
    supplied.  Perturbed evaluations run in ``oracle_dtype`` (extended
    precision by default) so rounding in the difference quotient stays far
    below the tolerances being checked.  Relative error uses the denominator
    ``max(|a|, |b|, 1e-8)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if analytic is None:
        tape = Tape()
        params = {k: tape.param(k, np.asarray(v, dtype=np.float64)) for k, v in point.items()}
        analytic = backward(tape, fn(tape, params))

    base = {k: np.asarray(v, dtype=oracle_dtype) for k, v in point.items()}

    def evaluate(arrays):
        tape = Tape()
        params = {k: tape.param(k, v) for k, v in arrays.items()}
        val = fn(tape, params)
        val = val.data if isinstance(val, Tensor) else np.asarray(val)
        if not np.isfinite(val).all():
            raise NonFiniteError("function is not finite at a perturbed point")
        return val.item()

    h = oracle_dtype(step)
    worst = 0.0
    for name, arr in base.items():
        g = np.asarray(analytic[name], dtype=np.float64)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            fp = evaluate(base)
            arr[idx] = orig - h
            fm = evaluate(base)
            arr[idx] = orig
            num = float((fp - fm) / (2 * h))
            a = float(g[idx])
            rel = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, rel)
    return worst
