"""Pure numpy implementations of the hot kernels.

Every function here has a twin in the compiled ``_core`` extension with the
same signature and semantics; this module is used when the extension is not
built, and as the reference the extension is tested against.

Activation codes: 0 identity, 1 tanh, 2 sigmoid, 3 leaky rectifier (0.2).
Networks are plain dense stacks: ``a_l = h_{l-1} @ W_l + b_l``,
``h_l = act_l(a_l)``.
"""
import numpy as np

BACKEND = "numpy"

LEAKY_SLOPE = 0.2


def _act(code, a):
    if code == 0:
        return a.copy()
    if code == 1:
        return np.tanh(a)
    if code == 2:
        return 0.5 * (1.0 + np.tanh(0.5 * a))
    return np.where(a >= 0, a, LEAKY_SLOPE * a)


def _dact(code, a, h):
    """First derivative of the activation, from pre- and post-activation."""
    if code == 0:
        return np.ones_like(a)
    if code == 1:
        return 1.0 - h * h
    if code == 2:
        return h * (1.0 - h)
    return np.where(a >= 0, 1.0, LEAKY_SLOPE).astype(a.dtype)


def _ddact(code, h):
    """Second derivative; ``None`` when it vanishes identically."""
    if code == 1:
        return -2.0 * h * (1.0 - h * h)
    if code == 2:
        return h * (1.0 - h) * (1.0 - 2.0 * h)
    return None


def mlp_forward(weights, biases, acts, x):
    """Return ``(pre, post)`` activation lists, one entry per layer."""
    pre, post = [], []
    h = x
    for W, b, code in zip(weights, biases, acts):
        a = h @ W + b
        h = _act(code, a)
        pre.append(a)
        post.append(h)
    return pre, post


def mlp_backward(weights, acts, x, pre, post, grad_out):
    """Reverse pass for a cached forward.

    Returns ``(dW, db, dx)`` for the scalar whose gradient w.r.t. the network
    output is ``grad_out``.
    """
    L = len(weights)
    dW = [None] * L
    db = [None] * L
    g = grad_out
    for l in range(L - 1, -1, -1):
        d = g * _dact(acts[l], pre[l], post[l])
        h_prev = x if l == 0 else post[l - 1]
        dW[l] = h_prev.T @ d
        db[l] = d.sum(axis=0)
        g = d @ weights[l].T
    return dW, db, g


def penalty_grads(weights, biases, acts, x, eps=1e-12):
    """Gradient penalty ``mean_i (||grad_x f(x_i)||_2 - 1)^2`` and its parameter gradient.

    ``f`` must have a single output unit.  The input gradient is formed by
    an explicit reverse pass; the parameter gradient of the penalty is a
    second reverse pass through both the input-gradient computation and the
    forward pass.  Returns ``(penalty, norms, dW, db)``.
    """
    L = len(weights)
    m = x.shape[0]
    pre, post = mlp_forward(weights, biases, acts, x)
    hs = [x] + post

    # input gradient: u_L = 1, v_l = u_l * act'(a_l), u_{l-1} = v_l W_l^T
    us = [None] * (L + 1)
    vs = [None] * (L + 1)
    ds = [None] * (L + 1)
    us[L] = np.ones((m, 1), dtype=x.dtype)
    for l in range(L, 0, -1):
        ds[l] = _dact(acts[l - 1], pre[l - 1], post[l - 1])
        vs[l] = us[l] * ds[l]
        us[l - 1] = vs[l] @ weights[l - 1].T
    g = us[0]
    norms = np.sqrt((g * g).sum(axis=1) + eps)
    gap = norms - 1.0
    penalty = float(np.mean(gap * gap))

    dW = [np.zeros_like(W) for W in weights]
    db = [None] * L
    abar = [None] * (L + 1)
    ubar = ((2.0 / m) * gap / norms)[:, None] * g
    for l in range(1, L + 1):
        W = weights[l - 1]
        vbar = ubar @ W
        dW[l - 1] += ubar.T @ vs[l]
        dd = _ddact(acts[l - 1], post[l - 1])
        abar[l] = None if dd is None else vbar * us[l] * dd
        ubar = vbar * ds[l]

    hbar = None
    for l in range(L, 0, -1):
        A = abar[l]
        if hbar is not None:
            A = hbar * ds[l] if A is None else A + hbar * ds[l]
        if A is None:
            db[l - 1] = np.zeros_like(biases[l - 1])
            hbar = None
            continue
        dW[l - 1] += hs[l - 1].T @ A
        db[l - 1] = A.sum(axis=0)
        hbar = A @ weights[l - 1].T
    return penalty, norms, dW, db


def recurrence_matrix(series):
    """``R[i, j, c] = |s[i, c] - s[j, c]|`` for a ``(T, C)`` float array."""
    return np.abs(series[:, None, :] - series[None, :, :])


def mixture_density(points, centers, sigma):
    """Equal-weight isotropic Gaussian mixture density at ``points`` (n, 2)."""
    k = centers.shape[0]
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    norm = 1.0 / (2.0 * np.pi * sigma * sigma * k)
    return norm * np.exp(-0.5 * d2 / (sigma * sigma)).sum(axis=1)


def gaussian_kde(query, samples, bandwidth):
    """Isotropic 2-D Gaussian kernel density estimate at ``query`` points."""
    out = np.empty(query.shape[0])
    n = samples.shape[0]
    norm = 1.0 / (2.0 * np.pi * bandwidth * bandwidth * n)
    chunk = max(1, 2_000_000 // max(n, 1))
    for s in range(0, query.shape[0], chunk):
        q = query[s:s + chunk]
        d2 = ((q[:, None, :] - samples[None, :, :]) ** 2).sum(axis=2)
        out[s:s + chunk] = norm * np.exp(-0.5 * d2 / (bandwidth * bandwidth)).sum(axis=1)
    return out
