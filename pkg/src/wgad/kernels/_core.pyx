# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels (float64 only).

Mirrors ``_fallback`` function by function.  Matrix products go through the
BLAS shipped with scipy; elementwise work runs in C loops without
temporaries.
"""
import numpy as np

from libc.math cimport tanh, exp, sqrt, fabs
from scipy.linalg.cython_blas cimport dgemm

BACKEND = "cython"

cdef double LEAKY_SLOPE = 0.2


cdef inline void _gemm(bint ta, bint tb, int m, int n, int k, double alpha,
                       double* A, int lda, double* B, int ldb,
                       double beta, double* C, int ldc) noexcept nogil:
    # row-major C(m x n) = alpha * op(A) @ op(B) + beta * C, issued as the
    # column-major product C^T = op(B)^T @ op(A)^T
    cdef char ca = b'T' if ta else b'N'
    cdef char cb = b'T' if tb else b'N'
    dgemm(&cb, &ca, &n, &m, &k, &alpha, B, &ldb, A, &lda, &beta, C, &ldc)


cdef inline double _act(int code, double a) noexcept nogil:
    if code == 0:
        return a
    if code == 1:
        return tanh(a)
    if code == 2:
        return 0.5 * (1.0 + tanh(0.5 * a))
    return a if a >= 0 else LEAKY_SLOPE * a


cdef inline double _dact(int code, double a, double h) noexcept nogil:
    if code == 0:
        return 1.0
    if code == 1:
        return 1.0 - h * h
    if code == 2:
        return h * (1.0 - h)
    return 1.0 if a >= 0 else LEAKY_SLOPE


cdef inline double _ddact(int code, double h) noexcept nogil:
    if code == 1:
        return -2.0 * h * (1.0 - h * h)
    if code == 2:
        return h * (1.0 - h) * (1.0 - 2.0 * h)
    return 0.0


cdef void _dense(double[:, ::1] h, double[:, ::1] W, double[::1] b,
                 double[:, ::1] a) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef int m = h.shape[0], k = h.shape[1], n = W.shape[1]
    for i in range(m):
        for j in range(n):
            a[i, j] = b[j]
    _gemm(False, False, m, n, k, 1.0, &h[0, 0], k, &W[0, 0], n, 1.0, &a[0, 0], n)


def mlp_forward(list weights, list biases, acts, double[:, ::1] x):
    cdef Py_ssize_t l, i, j, L = len(weights)
    cdef int m = x.shape[0], code
    cdef double[:, ::1] h = x
    cdef double[:, ::1] a, out
    cdef list pre = [], post = []
    for l in range(L):
        W = weights[l]
        n = W.shape[1]
        if W.shape[0] != h.shape[1]:
            raise ValueError("width mismatch")
        A = np.empty((m, n))
        H = np.empty((m, n))
        a = A
        out = H
        code = acts[l]
        if m > 0:
            _dense(h, W, biases[l], a)
            for i in range(m):
                for j in range(n):
                    out[i, j] = _act(code, a[i, j])
        pre.append(A)
        post.append(H)
        h = out
    return pre, post


def mlp_backward(list weights, acts, double[:, ::1] x, list pre, list post,
                 double[:, ::1] grad_out):
    cdef Py_ssize_t l, i, j, L = len(weights)
    cdef int m = x.shape[0], n, k, code
    cdef double[:, ::1] g = grad_out
    cdef double[:, ::1] a, h, hp, d, dw, gn, W
    cdef double[::1] dbv
    cdef list dW = [None] * L, db = [None] * L
    for l in range(L - 1, -1, -1):
        W = weights[l]
        k = W.shape[0]
        n = W.shape[1]
        code = acts[l]
        a = pre[l]
        h = post[l]
        D = np.empty((m, n))
        d = D
        DB = np.zeros(n)
        dbv = DB
        for i in range(m):
            for j in range(n):
                d[i, j] = g[i, j] * _dact(code, a[i, j], h[i, j])
                dbv[j] += d[i, j]
        hp = x if l == 0 else post[l - 1]
        DW = np.empty((k, n))
        dw = DW
        GN = np.empty((m, k))
        gn = GN
        if m > 0:
            _gemm(True, False, k, n, m, 1.0, &hp[0, 0], k, &d[0, 0], n, 0.0, &dw[0, 0], n)
            _gemm(False, True, m, k, n, 1.0, &d[0, 0], n, &W[0, 0], n, 0.0, &gn[0, 0], k)
        else:
            DW[...] = 0.0
        dW[l] = DW
        db[l] = DB
        g = gn
    return dW, db, np.asarray(g)


def penalty_grads(list weights, list biases, acts, double[:, ::1] x, double eps=1e-12):
    cdef Py_ssize_t l, i, j, L = len(weights)
    cdef int m = x.shape[0], n, k, code
    cdef double s, gap, coef, penalty = 0.0
    cdef double[:, ::1] W, a, h, u, v, dd, ub, vb, ab, hb, A_, dw, hp
    cdef double[::1] normv, dbv
    cdef bint has_a

    pre, post = mlp_forward(weights, biases, acts, x)
    hs = [np.asarray(x)] + post

    us = [None] * (L + 1)
    vs = [None] * (L + 1)
    ds = [None] * (L + 1)
    U = np.ones((m, 1))
    us[L] = U
    for l in range(L, 0, -1):
        W = weights[l - 1]
        k = W.shape[0]
        n = W.shape[1]
        code = acts[l - 1]
        a = pre[l - 1]
        h = post[l - 1]
        u = us[l]
        Dd = np.empty((m, n))
        Vv = np.empty((m, n))
        dd = Dd
        v = Vv
        for i in range(m):
            for j in range(n):
                dd[i, j] = _dact(code, a[i, j], h[i, j])
                v[i, j] = u[i, j] * dd[i, j]
        Un = np.empty((m, k))
        u = Un
        _gemm(False, True, m, k, n, 1.0, &v[0, 0], n, &W[0, 0], n, 0.0, &u[0, 0], k)
        ds[l] = Dd
        vs[l] = Vv
        us[l - 1] = Un

    g0 = us[0]
    u = g0
    k = u.shape[1]
    NORMS = np.empty(m)
    normv = NORMS
    UB = np.empty((m, k))
    ub = UB
    for i in range(m):
        s = eps
        for j in range(k):
            s += u[i, j] * u[i, j]
        normv[i] = sqrt(s)
        gap = normv[i] - 1.0
        penalty += gap * gap
        coef = (2.0 / m) * gap / normv[i]
        for j in range(k):
            ub[i, j] = coef * u[i, j]
    penalty /= m

    dWs = [np.zeros_like(weights[l]) for l in range(L)]
    dbs = [None] * L
    abar = [None] * (L + 1)
    for l in range(1, L + 1):
        W = weights[l - 1]
        k = W.shape[0]
        n = W.shape[1]
        code = acts[l - 1]
        VB = np.empty((m, n))
        vb = VB
        _gemm(False, False, m, n, k, 1.0, &ub[0, 0], k, &W[0, 0], n, 0.0, &vb[0, 0], n)
        dw = dWs[l - 1]
        v = vs[l]
        _gemm(True, False, k, n, m, 1.0, &ub[0, 0], k, &v[0, 0], n, 1.0, &dw[0, 0], n)
        dd = ds[l]
        u = us[l]
        h = post[l - 1]
        if code == 1 or code == 2:
            AB = np.empty((m, n))
            ab = AB
            for i in range(m):
                for j in range(n):
                    ab[i, j] = vb[i, j] * u[i, j] * _ddact(code, h[i, j])
            abar[l] = AB
        for i in range(m):
            for j in range(n):
                vb[i, j] = vb[i, j] * dd[i, j]
        ub = vb

    has_h = False
    HB = None
    for l in range(L, 0, -1):
        W = weights[l - 1]
        k = W.shape[0]
        n = W.shape[1]
        AB = abar[l]
        has_a = AB is not None
        if not has_a and not has_h:
            dbs[l - 1] = np.zeros(n)
            has_h = False
            continue
        if has_a:
            A_ = AB
        else:
            A_ = np.zeros((m, n))
        if has_h:
            hb = HB
            dd = ds[l]
            for i in range(m):
                for j in range(n):
                    A_[i, j] += hb[i, j] * dd[i, j]
        DB = np.zeros(n)
        dbv = DB
        for i in range(m):
            for j in range(n):
                dbv[j] += A_[i, j]
        dbs[l - 1] = DB
        hp = hs[l - 1]
        dw = dWs[l - 1]
        _gemm(True, False, k, n, m, 1.0, &hp[0, 0], k, &A_[0, 0], n, 1.0, &dw[0, 0], n)
        if l > 1:
            HB = np.empty((m, k))
            hb = HB
            _gemm(False, True, m, k, n, 1.0, &A_[0, 0], n, &W[0, 0], n, 0.0, &hb[0, 0], k)
            has_h = True
    return penalty, NORMS, dWs, dbs


def recurrence_matrix(double[:, ::1] series):
    cdef Py_ssize_t T = series.shape[0], C = series.shape[1], i, j, c
    cdef double d
    R = np.empty((T, T, C))
    cdef double[:, :, ::1] r = R
    with nogil:
        for i in range(T):
            for c in range(C):
                r[i, i, c] = 0.0
            for j in range(i + 1, T):
                for c in range(C):
                    d = fabs(series[i, c] - series[j, c])
                    r[i, j, c] = d
                    r[j, i, c] = d
    return R


def mixture_density(double[:, ::1] points, double[:, ::1] centers, double sigma):
    cdef Py_ssize_t n = points.shape[0], k = centers.shape[0], i, j
    cdef double dx, dy, acc
    cdef double inv = 0.5 / (sigma * sigma)
    cdef double norm = 1.0 / (2.0 * 3.141592653589793 * sigma * sigma * k)
    OUT = np.empty(n)
    cdef double[::1] out = OUT
    with nogil:
        for i in range(n):
            acc = 0.0
            for j in range(k):
                dx = points[i, 0] - centers[j, 0]
                dy = points[i, 1] - centers[j, 1]
                acc += exp(-(dx * dx + dy * dy) * inv)
            out[i] = norm * acc
    return OUT


def gaussian_kde(double[:, ::1] query, double[:, ::1] samples, double bandwidth):
    cdef Py_ssize_t nq = query.shape[0], n = samples.shape[0], i, j
    cdef double dx, dy, acc
    cdef double inv = 0.5 / (bandwidth * bandwidth)
    cdef double norm = 1.0 / (2.0 * 3.141592653589793 * bandwidth * bandwidth * n)
    OUT = np.empty(nq)
    cdef double[::1] out = OUT
    with nogil:
        for i in range(nq):
            acc = 0.0
            for j in range(n):
                dx = query[i, 0] - samples[j, 0]
                dy = query[i, 1] - samples[j, 1]
                acc += exp(-(dx * dx + dy * dy) * inv)
            out[i] = norm * acc
    return OUT
