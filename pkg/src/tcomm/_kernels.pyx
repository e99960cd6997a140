# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: dense layers on BLAS, fused activations and Adam.

Same signatures and semantics as ``tcomm._kernels_py``. Arrays are row-major
float64; row-major matrices are passed to column-major BLAS as transposes.
"""

import numpy as np

from libc.math cimport exp, fmax, pow, sqrt
from scipy.linalg.cython_blas cimport dgemm

LINEAR, RELU, TANH, SOFTMAX = 0, 1, 2, 3


cdef inline double[:, ::1] _mat(obj):
    return np.ascontiguousarray(obj, dtype=np.float64)


cdef inline double[::1] _vec(obj):
    return np.ascontiguousarray(obj, dtype=np.float64)


cdef void _relu_inplace(double* p, Py_ssize_t size) noexcept nogil:
    # flat and branch-free so the compiler can vectorize it
    cdef Py_ssize_t i
    for i in range(size):
        p[i] = p[i] if p[i] > 0.0 else 0.0


cdef void _softmax_inplace(double[:, ::1] z) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double mx, total
    for i in range(z.shape[0]):
        mx = z[i, 0]
        for j in range(1, z.shape[1]):
            if z[i, j] > mx:
                mx = z[i, j]
        total = 0.0
        for j in range(z.shape[1]):
            z[i, j] = exp(z[i, j] - mx)
            total += z[i, j]
        for j in range(z.shape[1]):
            z[i, j] = z[i, j] / total


def softmax_rows(z):
    out = np.array(z, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] zv = out
    if out.size:
        _softmax_inplace(zv)
    return out


def dense_forward(x_in, W_in, b_in, int act):
    cdef double[:, ::1] x = _mat(x_in)
    cdef double[:, ::1] W = _mat(W_in)
    cdef double[::1] b = _vec(b_in)
    cdef int n = <int>x.shape[0]
    cdef int k = <int>x.shape[1]
    cdef int m = <int>W.shape[0]
    if W.shape[1] != k or b.shape[0] != m:
        raise ValueError(f"shape mismatch: x {x.shape[0]}x{k}, W {m}x{W.shape[1]}, b {b.shape[0]}")
    y = np.empty((n, m), dtype=np.float64)
    if n == 0:
        return y
    cdef double[:, ::1] yv = y
    cdef Py_ssize_t i, j
    cdef double one = 1.0
    cdef char ta = b"T"
    cdef char tn = b"N"
    cdef double* yp = &yv[0, 0]
    cdef Py_ssize_t total = <Py_ssize_t>n * m
    with nogil:
        for i in range(n):
            for j in range(m):
                yp[i * m + j] = b[j]
        # Y^T (m x n) = W (m x k) * X^T (k x n), accumulated onto the bias
        dgemm(&ta, &tn, &m, &n, &k, &one, &W[0, 0], &k, &x[0, 0], &k, &one, yp, &m)
        if act == 1:
            _relu_inplace(yp, total)
        elif act == 3:
            _softmax_inplace(yv)
    if act == 2:
        # numpy's tanh is vectorized; libm's scalar tanh is several times slower
        np.tanh(y, out=y)
    return y


def dense_backward(x_in, W_in, y_in, int act, gy_in, gW_out, gb_out, bint need_gx=True):
    cdef double[:, ::1] x = _mat(x_in)
    cdef double[:, ::1] W = _mat(W_in)
    cdef double[:, ::1] y = _mat(y_in)
    cdef double[:, ::1] gy = _mat(gy_in)
    cdef double[:, ::1] gW = gW_out
    cdef double[::1] gb = gb_out
    cdef int n = <int>x.shape[0]
    cdef int k = <int>x.shape[1]
    cdef int m = <int>W.shape[0]
    if gy.shape[0] != n or gy.shape[1] != m or y.shape[0] != n or y.shape[1] != m:
        raise ValueError("gradient / activation shapes do not match the layer")
    if gW.shape[0] != m or gW.shape[1] != k or gb.shape[0] != m:
        raise ValueError("gradient buffers do not match the layer")
    gz_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] gz = gz_arr
    cdef Py_ssize_t i, j
    cdef double dot, zero = 0.0, one = 1.0
    cdef char ta = b"T"
    cdef char tn = b"N"
    if n == 0:
        gW_out[...] = 0.0
        gb_out[...] = 0.0
        return np.empty((0, k)) if need_gx else None
    cdef double* gzp = &gz[0, 0]
    cdef double* gyp = &gy[0, 0]
    cdef double* yp = &y[0, 0]
    cdef Py_ssize_t t, total = <Py_ssize_t>n * m
    with nogil:
        if act == 1:
            for t in range(total):
                gzp[t] = gyp[t] if yp[t] > 0.0 else 0.0
        elif act == 2:
            for t in range(total):
                gzp[t] = gyp[t] * (1.0 - yp[t] * yp[t])
        elif act == 3:
            for i in range(n):
                dot = 0.0
                for j in range(m):
                    dot = dot + gy[i, j] * y[i, j]
                for j in range(m):
                    gz[i, j] = y[i, j] * (gy[i, j] - dot)
        else:
            for t in range(total):
                gzp[t] = gyp[t]
        # gW^T (k x m) = X^T (k x n) * gZ (n x m)
        dgemm(&tn, &ta, &k, &m, &n, &one, &x[0, 0], &k, &gz[0, 0], &m, &zero, &gW[0, 0], &k)
        for j in range(m):
            gb[j] = 0.0
        for i in range(n):
            for j in range(m):
                gb[j] = gb[j] + gzp[i * m + j]
    if not need_gx:
        return None
    gx_arr = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    with nogil:
        # gX^T (k x n) = W^T (k x m) * gZ^T (m x n)
        dgemm(&tn, &tn, &k, &n, &m, &one, &W[0, 0], &k, &gz[0, 0], &m, &zero, &gx[0, 0], &k)
    return gx_arr


def powernorm_forward(x_in):
    cdef double[:, ::1] x = _mat(x_in)
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    y = np.empty((n, d), dtype=np.float64)
    scale = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] yv = y
    cdef double[::1] sv = scale
    cdef double energy, s
    with nogil:
        for i in range(n):
            energy = 0.0
            for j in range(d):
                energy = energy + x[i, j] * x[i, j]
            s = sqrt(d / energy)
            sv[i] = s
            for j in range(d):
                yv[i, j] = x[i, j] * s
    return y, scale


def powernorm_backward(y_in, scale_in, gy_in):
    cdef double[:, ::1] y = _mat(y_in)
    cdef double[::1] scale = _vec(scale_in)
    cdef double[:, ::1] gy = _mat(gy_in)
    cdef Py_ssize_t n = y.shape[0], d = y.shape[1], i, j
    gx = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] gv = gx
    cdef double proj
    with nogil:
        for i in range(n):
            proj = 0.0
            for j in range(d):
                proj = proj + gy[i, j] * y[i, j]
            proj = proj / d
            for j in range(d):
                gv[i, j] = scale[i] * (gy[i, j] - y[i, j] * proj)
    return gx


def adam_update(double[::1] p, g_in, double[::1] m, double[::1] v,
                double lr, double beta1, double beta2, double eps, long t):
    cdef double[::1] g = _vec(g_in)
    cdef Py_ssize_t i, size = p.shape[0]
    if g.shape[0] != size or m.shape[0] != size or v.shape[0] != size:
        raise ValueError("Adam buffers must share one length")
    if size == 0:
        return
    cdef double bc1 = 1.0 - pow(beta1, <double>t)
    cdef double bc2 = 1.0 - pow(beta2, <double>t)
    cdef double* pp = &p[0]
    cdef double* gp = &g[0]
    cdef double* mp = &m[0]
    cdef double* vp = &v[0]
    cdef double mi, vi
    with nogil:
        for i in range(size):
            mi = mp[i] * beta1 + (1.0 - beta1) * gp[i]
            vi = vp[i] * beta2 + (1.0 - beta2) * (gp[i] * gp[i])
            mp[i] = mi
            vp[i] = vi
            pp[i] = pp[i] - lr * (mi / bc1) / (sqrt(vi / bc2) + eps)
