"""Hot numerical kernels with a compiled core and a numpy fallback.

The compiled extension ``_core`` is used when it was built and importable;
otherwise every call goes to ``_fallback``.  Setting ``WGAD_PURE_PYTHON=1``
before import forces the fallback.  The compiled path only handles float64;
other dtypes are routed to the fallback per call.
"""
import os

import numpy as np

from . import _fallback

try:
    if os.environ.get("WGAD_PURE_PYTHON"):
        raise ImportError("pure-python backend requested")
    from . import _core as _compiled
except ImportError:
    _compiled = None

BACKEND = "cython" if _compiled is not None else "numpy"

ACT_CODES = {"identity": 0, "tanh": 1, "sigmoid": 2, "leaky_relu": 3}


def _impl(*arrays):
    if _compiled is None:
        return _fallback
    for a in arrays:
        if a.dtype != np.float64 or not a.flags.c_contiguous:
            return _fallback
    return _compiled


def mlp_forward(weights, biases, acts, x):
    """Forward pass of a plain dense stack; returns ``(pre, post)`` lists."""
    return _impl(x, *weights, *biases).mlp_forward(list(weights), list(biases), acts, x)


def mlp_backward(weights, acts, x, pre, post, grad_out):
    """Reverse pass for cached activations; returns ``(dW, db, dx)``."""
    return _impl(x, grad_out, *weights, *pre, *post).mlp_backward(
        list(weights), acts, x, list(pre), list(post), grad_out)


def penalty_grads(weights, biases, acts, x, eps=1e-12):
    """Mean gradient penalty at ``x`` with its parameter gradient.

    Returns ``(penalty, per_sample_norms, dW, db)``.
    """
    if x.shape[0] == 0:
        raise ValueError("penalty needs at least one sample")
    if weights[-1].shape[1] != 1:
        raise ValueError("penalty needs a single-output critic")
    return _impl(x, *weights, *biases).penalty_grads(list(weights), list(biases), acts, x, eps)


def recurrence_matrix(series):
    return _impl(series).recurrence_matrix(series)


def mixture_density(points, centers, sigma):
    return _impl(points, centers).mixture_density(points, centers, float(sigma))


def gaussian_kde(query, samples, bandwidth):
    return _impl(query, samples).gaussian_kde(query, samples, float(bandwidth))
