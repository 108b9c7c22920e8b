# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: the LSTM recurrence (forward and backward) and LCS.

Signatures and semantics match ``oaag._kernels_py``. Arithmetic is carried
out in double precision internally; outputs take the input dtype.
"""
import numpy as np

from libc.math cimport exp, tanh
from libc.stdint cimport int64_t

ctypedef fused real:
    float
    double


cdef inline double _sig(double z) noexcept nogil:
    cdef double e
    if z >= 0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


def lstm_forward(real[:, ::1] xw, real[:, ::1] wh, real[::1] h0, real[::1] c0):
    cdef Py_ssize_t L = xw.shape[0]
    cdef Py_ssize_t four_n = xw.shape[1]
    cdef Py_ssize_t n = four_n // 4
    cdef Py_ssize_t t, j, k
    cdef double hk, cj
    dtype = np.float64 if real is double else np.float32
    H_arr = np.empty((L, n), dtype=dtype)
    C_arr = np.empty((L, n), dtype=dtype)
    G_arr = np.empty((L, four_n), dtype=dtype)
    cdef real[:, ::1] H = H_arr
    cdef real[:, ::1] C = C_arr
    cdef real[:, ::1] G = G_arr
    cdef double[::1] z = np.empty(four_n)
    cdef double[::1] h = np.empty(n)
    cdef double[::1] c = np.empty(n)
    with nogil:
        for k in range(n):
            h[k] = h0[k]
            c[k] = c0[k]
        for t in range(L):
            for j in range(four_n):
                z[j] = xw[t, j]
            for k in range(n):
                hk = h[k]
                if hk != 0.0:
                    for j in range(four_n):
                        z[j] += hk * wh[k, j]
            for j in range(2 * n):
                z[j] = _sig(z[j])
            for j in range(2 * n, 3 * n):
                z[j] = tanh(z[j])
            for j in range(3 * n, four_n):
                z[j] = _sig(z[j])
            for j in range(n):
                cj = z[n + j] * c[j] + z[j] * z[2 * n + j]
                c[j] = cj
                h[j] = z[3 * n + j] * tanh(cj)
                H[t, j] = <real>h[j]
                C[t, j] = <real>cj
            for j in range(four_n):
                G[t, j] = <real>z[j]
    return H_arr, C_arr, G_arr


def lstm_backward(real[:, ::1] dH, real[:, ::1] wh, real[::1] h0, real[::1] c0,
                  real[:, ::1] H, real[:, ::1] C, real[:, ::1] G):
    cdef Py_ssize_t L = dH.shape[0]
    cdef Py_ssize_t n = dH.shape[1]
    cdef Py_ssize_t four_n = 4 * n
    cdef Py_ssize_t t, j, k
    cdef double i_, f_, g_, o_, tc, dh, dc, cp, hp, acc
    dtype = np.float64 if real is double else np.float32
    dxw_arr = np.empty((L, four_n), dtype=dtype)
    cdef real[:, ::1] dxw = dxw_arr
    cdef double[:, ::1] dwh = np.zeros((n, four_n))
    cdef double[::1] dz = np.empty(four_n)
    cdef double[::1] dh_next = np.zeros(n)
    cdef double[::1] dc_next = np.zeros(n)
    with nogil:
        for t in range(L - 1, -1, -1):
            for j in range(n):
                i_ = G[t, j]
                f_ = G[t, n + j]
                g_ = G[t, 2 * n + j]
                o_ = G[t, 3 * n + j]
                cp = C[t - 1, j] if t > 0 else c0[j]
                tc = tanh(C[t, j])
                dh = dH[t, j] + dh_next[j]
                dc = dc_next[j] + dh * o_ * (1.0 - tc * tc)
                dz[j] = dc * g_ * i_ * (1.0 - i_)
                dz[n + j] = dc * cp * f_ * (1.0 - f_)
                dz[2 * n + j] = dc * i_ * (1.0 - g_ * g_)
                dz[3 * n + j] = dh * tc * o_ * (1.0 - o_)
                dc_next[j] = dc * f_
            for j in range(four_n):
                dxw[t, j] = <real>dz[j]
            for k in range(n):
                hp = H[t - 1, k] if t > 0 else h0[k]
                acc = 0.0
                for j in range(four_n):
                    dwh[k, j] += hp * dz[j]
                    acc += wh[k, j] * dz[j]
                dh_next[k] = acc
    return (dxw_arr, np.asarray(dwh).astype(dtype, copy=False),
            np.asarray(dh_next).astype(dtype, copy=False),
            np.asarray(dc_next).astype(dtype, copy=False))


def lcs_length(const int64_t[::1] a, const int64_t[::1] b):
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t n = b.shape[0]
    cdef Py_ssize_t i, j, cur, prev
    if m == 0 or n == 0:
        return 0
    cdef int64_t[:, ::1] dp = np.zeros((2, n + 1), dtype=np.int64)
    with nogil:
        for i in range(m):
            cur = (i + 1) & 1
            prev = i & 1
            dp[cur, 0] = 0
            for j in range(1, n + 1):
                if a[i] == b[j - 1]:
                    dp[cur, j] = dp[prev, j - 1] + 1
                elif dp[cur, j - 1] > dp[prev, j]:
                    dp[cur, j] = dp[cur, j - 1]
                else:
                    dp[cur, j] = dp[prev, j]
    return int(dp[m & 1, n])
