# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-step channel exchange.

Layouts (all float64 C-contiguous unless noted):

    X         (n, 2, N)    agent states [x_i; xi_i]
    lo, hi    (E,) int64   edge endpoints, lo < hi
    blk       (E, 2, 2)    scalar block of E_ij
    minv      (E, 2, 2)    (I + blk/eta)^{-1}
    eta       (E,)
    d_lh,d_hl (E,) int64   delay in steps of the lo->hi / hi->lo lines
    pool      (P, 2, N)    ring buffers; line of delay d owns d+1 slots
    off_lh, off_hl (E,)    first slot of each line inside ``pool``
    coupling  (n, 2, N)    out: sum of controller outputs per agent
    port_r, port_v (E, 2, 2, N)  out: received signal / output, end 0 = lo
    acc_vr (E, 2), acc_v, acc_r (E, 2, 2, N)   running time integrals

At step k a line of delay d is written at slot k % (d+1) and read at
slot (k+1) % (d+1), which holds the sample from step k-d (zero before
the first write).
"""

from libc.math cimport sqrt

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline void _port(
    Py_ssize_t k, Py_ssize_t e, int end, Py_ssize_t node, double sigma,
    const double[:, :, ::1] X, const double[:, :, ::1] blk, const double[:, :, ::1] minv,
    double eta_e, double[:, :, ::1] pool, Py_ssize_t in_slot, Py_ssize_t out_slot,
    double[:, :, ::1] coupling, double[:, :, :, ::1] port_r, double[:, :, :, ::1] port_v,
    double[:, ::1] acc_vr, double[:, :, :, ::1] acc_v, double[:, :, :, ::1] acc_r,
    double h, double decode_sign,
) noexcept nogil:
    cdef Py_ssize_t N = X.shape[2]
    cdef Py_ssize_t c
    cdef double a00 = blk[e, 0, 0], a01 = blk[e, 0, 1], a10 = blk[e, 1, 0], a11 = blk[e, 1, 1]
    cdef double m00 = minv[e, 0, 0], m01 = minv[e, 0, 1], m10 = minv[e, 1, 0], m11 = minv[e, 1, 1]
    cdef double gain = sigma * decode_sign * sqrt(2.0 / eta_e)
    cdef double out_scale = sigma / sqrt(2.0 * eta_e)
    cdef double x0, x1, q0, q1, r0, r1, v0, v1, vr = 0.0
    for c in range(N):
        x0 = X[node, 0, c]
        x1 = X[node, 1, c]
        q0 = (a00 * x0 + a01 * x1) / eta_e + gain * pool[in_slot, 0, c]
        q1 = (a10 * x0 + a11 * x1) / eta_e + gain * pool[in_slot, 1, c]
        r0 = m00 * q0 + m01 * q1
        r1 = m10 * q0 + m11 * q1
        v0 = a00 * (r0 - x0) + a01 * (r1 - x1)
        v1 = a10 * (r0 - x0) + a11 * (r1 - x1)
        pool[out_slot, 0, c] = out_scale * (v0 - eta_e * r0)
        pool[out_slot, 1, c] = out_scale * (v1 - eta_e * r1)
        coupling[node, 0, c] += v0
        coupling[node, 1, c] += v1
        port_r[e, end, 0, c] = r0
        port_r[e, end, 1, c] = r1
        port_v[e, end, 0, c] = v0
        port_v[e, end, 1, c] = v1
        acc_v[e, end, 0, c] += h * v0
        acc_v[e, end, 1, c] += h * v1
        acc_r[e, end, 0, c] += h * r0
        acc_r[e, end, 1, c] += h * r1
        vr += v0 * r0 + v1 * r1
    acc_vr[e, end] += h * vr


cdef inline void _midpoint_port(
    Py_ssize_t e, int end, Py_ssize_t node, Py_ssize_t other, double sigma,
    const double[:, :, ::1] X, const double[:, :, ::1] blk, double eta_e,
    double[:, :, ::1] pool, Py_ssize_t out_slot,
    double[:, :, ::1] coupling, double[:, :, :, ::1] port_r, double[:, :, :, ::1] port_v,
    double[:, ::1] acc_vr, double[:, :, :, ::1] acc_v, double[:, :, :, ::1] acc_r, double h,
) noexcept nogil:
    cdef Py_ssize_t N = X.shape[2]
    cdef Py_ssize_t c
    cdef double a00 = blk[e, 0, 0], a01 = blk[e, 0, 1], a10 = blk[e, 1, 0], a11 = blk[e, 1, 1]
    cdef double out_scale = sigma / sqrt(2.0 * eta_e)
    cdef double x0, x1, r0, r1, v0, v1, vr = 0.0
    for c in range(N):
        x0 = X[node, 0, c]
        x1 = X[node, 1, c]
        r0 = 0.5 * (x0 + X[other, 0, c])
        r1 = 0.5 * (x1 + X[other, 1, c])
        v0 = a00 * (r0 - x0) + a01 * (r1 - x1)
        v1 = a10 * (r0 - x0) + a11 * (r1 - x1)
        pool[out_slot, 0, c] = out_scale * (v0 - eta_e * r0)
        pool[out_slot, 1, c] = out_scale * (v1 - eta_e * r1)
        coupling[node, 0, c] += v0
        coupling[node, 1, c] += v1
        port_r[e, end, 0, c] = r0
        port_r[e, end, 1, c] = r1
        port_v[e, end, 0, c] = v0
        port_v[e, end, 1, c] = v1
        acc_v[e, end, 0, c] += h * v0
        acc_v[e, end, 1, c] += h * v1
        acc_r[e, end, 0, c] += h * r0
        acc_r[e, end, 1, c] += h * r1
        vr += v0 * r0 + v1 * r1
    acc_vr[e, end] += h * vr


def scatter_exchange(
    Py_ssize_t k,
    const double[:, :, ::1] X,
    const long long[::1] lo, const long long[::1] hi,
    const double[:, :, ::1] blk, const double[:, :, ::1] minv, const double[::1] eta,
    const long long[::1] d_lh, const long long[::1] d_hl,
    double[:, :, ::1] pool, const long long[::1] off_lh, const long long[::1] off_hl,
    double[:, :, ::1] coupling, double[:, :, :, ::1] port_r, double[:, :, :, ::1] port_v,
    double[:, ::1] acc_vr, double[:, :, :, ::1] acc_v, double[:, :, :, ::1] acc_r,
    double h, double decode_sign=1.0,
):
    cdef Py_ssize_t E = lo.shape[0]
    cdef Py_ssize_t e, L, H
    cdef Py_ssize_t in_lo, out_lo, in_hi, out_hi
    with nogil:
        coupling[...] = 0.0
        for e in range(E):
            L = lo[e]
            H = hi[e]
            # lo reads the hi->lo line, writes the lo->hi line
            in_lo = off_hl[e] + (k + 1) % (d_hl[e] + 1)
            out_lo = off_lh[e] + k % (d_lh[e] + 1)
            in_hi = off_lh[e] + (k + 1) % (d_lh[e] + 1)
            out_hi = off_hl[e] + k % (d_hl[e] + 1)
            if d_hl[e] >= 1:
                _port(k, e, 0, L, 1.0, X, blk, minv, eta[e], pool, in_lo, out_lo,
                      coupling, port_r, port_v, acc_vr, acc_v, acc_r, h, decode_sign)
                _port(k, e, 1, H, -1.0, X, blk, minv, eta[e], pool, in_hi, out_hi,
                      coupling, port_r, port_v, acc_vr, acc_v, acc_r, h, decode_sign)
            elif d_lh[e] >= 1:
                _port(k, e, 1, H, -1.0, X, blk, minv, eta[e], pool, in_hi, out_hi,
                      coupling, port_r, port_v, acc_vr, acc_v, acc_r, h, decode_sign)
                _port(k, e, 0, L, 1.0, X, blk, minv, eta[e], pool, in_lo, out_lo,
                      coupling, port_r, port_v, acc_vr, acc_v, acc_r, h, decode_sign)
            else:
                _midpoint_port(e, 0, L, H, 1.0, X, blk, eta[e], pool, out_lo,
                               coupling, port_r, port_v, acc_vr, acc_v, acc_r, h)
                _midpoint_port(e, 1, H, L, -1.0, X, blk, eta[e], pool, out_hi,
                               coupling, port_r, port_v, acc_vr, acc_v, acc_r, h)


cdef inline void _naive_port(
    Py_ssize_t e, int end, Py_ssize_t node, const double[:, :, ::1] X, const double[:, :, ::1] blk,
    const double[:, :, ::1] pool, Py_ssize_t in_slot,
    double[:, :, ::1] coupling, double[:, :, :, ::1] port_r, double[:, :, :, ::1] port_v,
    double[:, ::1] acc_vr, double[:, :, :, ::1] acc_v, double[:, :, :, ::1] acc_r, double h,
) noexcept nogil:
    cdef Py_ssize_t N = X.shape[2]
    cdef Py_ssize_t c
    cdef double a00 = blk[e, 0, 0], a01 = blk[e, 0, 1], a10 = blk[e, 1, 0], a11 = blk[e, 1, 1]
    cdef double x0, x1, r0, r1, v0, v1, vr = 0.0
    for c in range(N):
        x0 = X[node, 0, c]
        x1 = X[node, 1, c]
        r0 = pool[in_slot, 0, c]
        r1 = pool[in_slot, 1, c]
        v0 = a00 * (r0 - x0) + a01 * (r1 - x1)
        v1 = a10 * (r0 - x0) + a11 * (r1 - x1)
        coupling[node, 0, c] += v0
        coupling[node, 1, c] += v1
        port_r[e, end, 0, c] = r0
        port_r[e, end, 1, c] = r1
        port_v[e, end, 0, c] = v0
        port_v[e, end, 1, c] = v1
        acc_v[e, end, 0, c] += h * v0
        acc_v[e, end, 1, c] += h * v1
        acc_r[e, end, 0, c] += h * r0
        acc_r[e, end, 1, c] += h * r1
        vr += v0 * r0 + v1 * r1
    acc_vr[e, end] += h * vr


def naive_exchange(
    Py_ssize_t k,
    const double[:, :, ::1] X,
    const long long[::1] lo, const long long[::1] hi,
    const double[:, :, ::1] blk,
    const long long[::1] d_lh, const long long[::1] d_hl,
    double[:, :, ::1] pool, const long long[::1] off_lh, const long long[::1] off_hl,
    double[:, :, ::1] coupling, double[:, :, :, ::1] port_r, double[:, :, :, ::1] port_v,
    double[:, ::1] acc_vr, double[:, :, :, ::1] acc_v, double[:, :, :, ::1] acc_r,
    double h,
):
    """Raw state transport: each agent receives its neighbor's delayed state."""
    cdef Py_ssize_t E = lo.shape[0]
    cdef Py_ssize_t N = X.shape[2]
    cdef Py_ssize_t e, c, L, H, w_lh, w_hl
    with nogil:
        coupling[...] = 0.0
        for e in range(E):
            L = lo[e]
            H = hi[e]
            w_lh = off_lh[e] + k % (d_lh[e] + 1)
            w_hl = off_hl[e] + k % (d_hl[e] + 1)
            for c in range(N):
                pool[w_lh, 0, c] = X[L, 0, c]
                pool[w_lh, 1, c] = X[L, 1, c]
                pool[w_hl, 0, c] = X[H, 0, c]
                pool[w_hl, 1, c] = X[H, 1, c]
            _naive_port(e, 0, L, X, blk, pool, off_hl[e] + (k + 1) % (d_hl[e] + 1),
                        coupling, port_r, port_v, acc_vr, acc_v, acc_r, h)
            _naive_port(e, 1, H, X, blk, pool, off_lh[e] + (k + 1) % (d_lh[e] + 1),
                        coupling, port_r, port_v, acc_vr, acc_v, acc_r, h)
