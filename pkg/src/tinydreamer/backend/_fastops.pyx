# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled elementwise kernels for the training hot path.

Single-pass fused loops for the activations that dominate per-step time in
the pure-numpy engine (each numpy expression allocates several temporaries).
Semantics are identical to ``tinydreamer.backend.fallback``.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp as c_exp

cnp.import_array()

COMPILED = True

ctypedef fused real:
    float
    double


cdef inline real _sig(real x) noexcept nogil:
    return <real>(1.0 / (1.0 + c_exp(-<double>x)))


def _as_flat(arr):
    return np.ascontiguousarray(arr).reshape(-1)


def sigmoid(object x):
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    _sigmoid_impl(_as_flat(x), out.reshape(-1))
    return out


def _sigmoid_impl(real[::1] x, real[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    with nogil:
        for i in range(n):
            out[i] = _sig(x[i])


def silu_fwd(object x):
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    _silu_fwd_impl(_as_flat(x), out.reshape(-1))
    return out


def _silu_fwd_impl(real[::1] x, real[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    with nogil:
        for i in range(n):
            out[i] = x[i] * _sig(x[i])


def silu_bwd(object x, object g):
    dt = np.result_type(x, g)
    x = np.ascontiguousarray(x, dtype=dt)
    g = np.ascontiguousarray(g, dtype=dt)
    out = np.empty_like(x)
    _silu_bwd_impl(_as_flat(x), _as_flat(g), out.reshape(-1))
    return out


def _silu_bwd_impl(real[::1] x, real[::1] g, real[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef real s
    with nogil:
        for i in range(n):
            s = _sig(x[i])
            out[i] = g[i] * (s * (<real>1.0 + x[i] * (<real>1.0 - s)))


def softmax_lastaxis(object x):
    x = np.ascontiguousarray(x)
    cdef Py_ssize_t cols = x.shape[x.ndim - 1]
    out = np.empty_like(x)
    _softmax_impl(x.reshape(-1, cols), out.reshape(-1, cols))
    return out


def _softmax_impl(real[:, ::1] x, real[:, ::1] out):
    cdef Py_ssize_t i, j, rows = x.shape[0], cols = x.shape[1]
    cdef double m, total
    with nogil:
        for i in range(rows):
            m = x[i, 0]
            for j in range(1, cols):
                if x[i, j] > m:
                    m = x[i, j]
            total = 0.0
            for j in range(cols):
                out[i, j] = <real>c_exp(<double>x[i, j] - m)
                total += out[i, j]
            for j in range(cols):
                out[i, j] = <real>(out[i, j] / total)


def softmax_bwd(object y, object g):
    dt = np.result_type(y, g)
    y = np.ascontiguousarray(y, dtype=dt)
    g = np.ascontiguousarray(g, dtype=dt)
    cdef Py_ssize_t cols = y.shape[y.ndim - 1]
    out = np.empty_like(y)
    _softmax_bwd_impl(y.reshape(-1, cols), g.reshape(-1, cols), out.reshape(-1, cols))
    return out


def _softmax_bwd_impl(real[:, ::1] y, real[:, ::1] g, real[:, ::1] out):
    cdef Py_ssize_t i, j, rows = y.shape[0], cols = y.shape[1]
    cdef double inner
    with nogil:
        for i in range(rows):
            inner = 0.0
            for j in range(cols):
                inner += <double>g[i, j] * <double>y[i, j]
            for j in range(cols):
                out[i, j] = <real>(y[i, j] * (<double>g[i, j] - inner))
