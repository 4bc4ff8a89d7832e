# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the hot inner loops (1D conv and small matmul).

Follows the summation-order contract documented in `_numpy_impl.py`; forward
results are bit-identical to the numpy backend (the extension is compiled
with -ffp-contract=off so no FMA contraction changes rounding).
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def matmul(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[1]
    out_arr = np.zeros((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, p
    cdef double aip
    for i in range(m):
        for p in range(k):
            aip = a[i, p]
            for j in range(n):
                out[i, j] = out[i, j] + aip * b[p, j]
    return out_arr


def conv1d_fwd(const double[:, :, ::1] xp, const double[:, :, ::1] w):
    cdef Py_ssize_t nb = xp.shape[0], cin = xp.shape[1], tp = xp.shape[2]
    cdef Py_ssize_t cout = w.shape[0], kk = w.shape[2]
    cdef Py_ssize_t t = tp - kk + 1
    out_arr = np.zeros((nb, cout, t), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, o, c, k, i
    cdef double wv
    for b in range(nb):
        for o in range(cout):
            for c in range(cin):
                for k in range(kk):
                    wv = w[o, c, k]
                    for i in range(t):
                        out[b, o, i] = out[b, o, i] + wv * xp[b, c, i + k]
    return out_arr


def conv1d_grad_w(const double[:, :, ::1] g, const double[:, :, ::1] xp, Py_ssize_t kk):
    cdef Py_ssize_t nb = g.shape[0], cout = g.shape[1], t = g.shape[2]
    cdef Py_ssize_t cin = xp.shape[1]
    gw_arr = np.zeros((cout, cin, kk), dtype=np.float64)
    cdef double[:, :, ::1] gw = gw_arr
    cdef Py_ssize_t b, o, c, k, i
    cdef double acc
    for o in range(cout):
        for c in range(cin):
            for k in range(kk):
                acc = 0.0
                for b in range(nb):
                    for i in range(t):
                        acc = acc + g[b, o, i] * xp[b, c, i + k]
                gw[o, c, k] = acc
    return gw_arr
