# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled einsum-layer kernels; same contracts as ``_pykernels``."""

import numpy as np

from libc.math cimport exp, log, INFINITY, isfinite

NAME = "cython"


cdef inline double _shift_row(const double[:, :, ::1] x, Py_ssize_t b, Py_ssize_t p,
                              double[:, :, ::1] out) noexcept nogil:
    cdef Py_ssize_t i, K = x.shape[2]
    cdef double m = -INFINITY
    for i in range(K):
        if x[b, p, i] > m:
            m = x[b, p, i]
    if not isfinite(m):
        m = 0.0
    for i in range(K):
        out[b, p, i] = exp(x[b, p, i] - m)
    return m


def log_einsum_forward(const double[:, :, ::1] left, const double[:, :, ::1] right,
                       const double[:, :, :, :, :] weights):
    cdef Py_ssize_t B = left.shape[0], P = left.shape[1], K = left.shape[2]
    cdef Py_ssize_t Ko = weights.shape[2]
    a_arr = np.empty((B, P, K))
    c_arr = np.empty((B, P, K))
    s_arr = np.empty((B, P, Ko))
    out_arr = np.empty((B, P, Ko))
    cdef double[:, :, ::1] a = a_arr
    cdef double[:, :, ::1] c = c_arr
    cdef double[:, :, ::1] s = s_arr
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, p, k, i, j
    cdef double ml, mr, acc, ai
    with nogil:
        for b in range(B):
            for p in range(P):
                ml = _shift_row(left, b, p, a)
                mr = _shift_row(right, b, p, c)
                for k in range(Ko):
                    acc = 0.0
                    for i in range(K):
                        ai = a[b, p, i]
                        for j in range(K):
                            acc = acc + weights[b, p, k, i, j] * ai * c[b, p, j]
                    s[b, p, k] = acc
                    if acc > 0.0:
                        out[b, p, k] = log(acc) + (ml + mr)
                    else:
                        out[b, p, k] = -INFINITY
    return out_arr, a_arr, c_arr, s_arr


def log_einsum_backward(const double[:, :, ::1] grad, const double[:, :, ::1] a,
                        const double[:, :, ::1] c, const double[:, :, ::1] s,
                        const double[:, :, :, :, :] weights, bint per_sample):
    cdef Py_ssize_t B = a.shape[0], P = a.shape[1], K = a.shape[2]
    cdef Py_ssize_t Ko = weights.shape[2]
    dl_arr = np.zeros((B, P, K))
    dr_arr = np.zeros((B, P, K))
    if per_sample:
        dw_arr = np.empty((B, P, Ko, K, K))
    else:
        dw_arr = np.zeros((1, P, Ko, K, K))
    cdef double[:, :, ::1] dl = dl_arr
    cdef double[:, :, ::1] dr = dr_arr
    cdef double[:, :, :, :, ::1] dw = dw_arr
    cdef Py_ssize_t b, p, k, i, j, bw
    cdef double q, w, ai, cj
    with nogil:
        for b in range(B):
            bw = b if per_sample else 0
            for p in range(P):
                for k in range(Ko):
                    if s[b, p, k] > 0.0:
                        q = grad[b, p, k] / s[b, p, k]
                    else:
                        q = 0.0
                    for i in range(K):
                        ai = a[b, p, i]
                        for j in range(K):
                            cj = c[b, p, j]
                            w = weights[b, p, k, i, j]
                            dl[b, p, i] += q * w * cj
                            dr[b, p, j] += q * w * ai
                            if per_sample:
                                dw[b, p, k, i, j] = q * ai * cj
                            else:
                                dw[0, p, k, i, j] += q * ai * cj
                for i in range(K):
                    dl[b, p, i] *= a[b, p, i]
                    dr[b, p, i] *= c[b, p, i]
    if not per_sample:
        dw_arr = dw_arr[0]
    return dl_arr, dr_arr, dw_arr


def log_einsum_max(const double[:, :, ::1] left, const double[:, :, ::1] right,
                   const double[:, :, :, :, :] log_weights):
    cdef Py_ssize_t B = left.shape[0], P = left.shape[1], K = left.shape[2]
    cdef Py_ssize_t Ko = log_weights.shape[2]
    out_arr = np.empty((B, P, Ko))
    arg_arr = np.empty((B, P, Ko), dtype=np.int64)
    cdef double[:, :, ::1] out = out_arr
    cdef long long[:, :, ::1] arg = arg_arr
    cdef Py_ssize_t b, p, k, i, j
    cdef double best, v
    cdef long long besti
    with nogil:
        for b in range(B):
            for p in range(P):
                for k in range(Ko):
                    best = -INFINITY
                    besti = 0
                    for i in range(K):
                        for j in range(K):
                            v = log_weights[b, p, k, i, j] + left[b, p, i] + right[b, p, j]
                            if v > best:
                                best = v
                                besti = i * K + j
                    out[b, p, k] = best
                    arg[b, p, k] = besti
    return out_arr, arg_arr
