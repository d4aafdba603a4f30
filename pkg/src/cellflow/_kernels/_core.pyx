# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: dense layers, SiLU, softmax, symmetric clipping.

Matmuls go straight to BLAS (dgemm) and the elementwise ops are single C
loops, which skips the per-call numpy dispatch that dominates at the small
batch sizes used here. Signatures mirror ``py_core``.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


def dense_forward(double[:, ::1] x, double[:, ::1] w, double[::1] b):
    """y = x @ w.T + b for x (B, n), w (m, n), b (m,)."""
    cdef int B = x.shape[0]
    cdef int n = x.shape[1]
    cdef int m = w.shape[0]
    y_arr = np.empty((B, m), dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    cdef double one = 1.0, zero = 0.0
    cdef char ta = b'T', tn = b'N'
    cdef int i, j
    if n > 0:
        # row-major y = x @ w.T  <=>  col-major y' = w' ^T @ x'
        dgemm(&ta, &tn, &m, &B, &n, &one, &w[0, 0], &n, &x[0, 0], &n, &zero, &y[0, 0], &m)
    else:
        y_arr[:] = 0.0
    for i in range(B):
        for j in range(m):
            y[i, j] += b[j]
    return y_arr


def dense_backward(double[:, ::1] x, double[:, ::1] w, double[:, ::1] gy):
    """Gradients of dense_forward: returns (gx, gw, gb)."""
    cdef int B = x.shape[0]
    cdef int n = x.shape[1]
    cdef int m = w.shape[0]
    gx_arr = np.empty((B, n), dtype=np.float64)
    gw_arr = np.empty((m, n), dtype=np.float64)
    gb_arr = np.zeros(m, dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef double[:, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef double one = 1.0, zero = 0.0
    cdef char tn = b'N', tt = b'T'
    cdef int i, j
    if n > 0 and m > 0:
        # gx = gy @ w          <=>  col-major gx' = w' @ gy'
        dgemm(&tn, &tn, &n, &B, &m, &one, &w[0, 0], &n, &gy[0, 0], &m, &zero, &gx[0, 0], &n)
        # gw = gy.T @ x        <=>  col-major gw' = x' @ gy'^T
        dgemm(&tn, &tt, &n, &m, &B, &one, &x[0, 0], &n, &gy[0, 0], &m, &zero, &gw[0, 0], &n)
    for i in range(B):
        for j in range(m):
            gb[j] += gy[i, j]
    return gx_arr, gw_arr, gb_arr


def silu(double[::1] x):
    cdef Py_ssize_t n = x.shape[0]
    y_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] y = y_arr
    cdef Py_ssize_t i
    cdef double s
    for i in range(n):
        s = 1.0 / (1.0 + exp(-x[i]))
        y[i] = x[i] * s
    return y_arr


def silu_backward(double[::1] x, double[::1] gy):
    cdef Py_ssize_t n = x.shape[0]
    g_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] g = g_arr
    cdef Py_ssize_t i
    cdef double s
    for i in range(n):
        s = 1.0 / (1.0 + exp(-x[i]))
        g[i] = gy[i] * s * (1.0 + x[i] * (1.0 - s))
    return g_arr


def softmax_last(double[:, ::1] x):
    cdef int B = x.shape[0]
    cdef int n = x.shape[1]
    y_arr = np.empty((B, n), dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    cdef int i, j
    cdef double m, s
    for i in range(B):
        m = x[i, 0]
        for j in range(1, n):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(n):
            y[i, j] = exp(x[i, j] - m)
            s += y[i, j]
        for j in range(n):
            y[i, j] /= s
    return y_arr


def softmax_backward_last(double[:, ::1] y, double[:, ::1] gy):
    cdef int B = y.shape[0]
    cdef int n = y.shape[1]
    g_arr = np.empty((B, n), dtype=np.float64)
    cdef double[:, ::1] g = g_arr
    cdef int i, j
    cdef double dot
    for i in range(B):
        dot = 0.0
        for j in range(n):
            dot += gy[i, j] * y[i, j]
        for j in range(n):
            g[i, j] = y[i, j] * (gy[i, j] - dot)
    return g_arr


def clip_sym(double[::1] x, double bound):
    cdef Py_ssize_t n = x.shape[0]
    y_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] y = y_arr
    cdef Py_ssize_t i
    for i in range(n):
        if x[i] > bound:
            y[i] = bound
        elif x[i] < -bound:
            y[i] = -bound
        else:
            y[i] = x[i]
    return y_arr


def clip_sym_backward(double[::1] x, double bound, double[::1] gy):
    cdef Py_ssize_t n = x.shape[0]
    g_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] g = g_arr
    cdef Py_ssize_t i
    for i in range(n):
        g[i] = 0.0 if fabs(x[i]) >= bound else gy[i]
    return g_arr
