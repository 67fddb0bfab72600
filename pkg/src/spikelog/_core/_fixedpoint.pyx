# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled integration kernels.

Mirrors fallback.py exactly; see that module for the semantics.  The
per-product decision tree must stay identical in both places so the
backends remain bit-for-bit interchangeable.
"""

import numpy as np

BACKEND = "cython"

cdef long long ACC_MAX = 2147483647
cdef long long LEFT_CAP = 21
cdef long long RIGHT_CAP = 48


cdef inline long long _product(long long units, const long long[::1] lut, long long fg,
                               long long shift_base, long long *sat) noexcept nogil:
    cdef long long f = units % fg
    if f < 0:
        f += fg
    cdef long long ip = (units - f) / fg  # exact division: truncation is floor here
    cdef long long entry = lut[f]
    cdef long long s = ip + shift_base
    cdef long long v, sh
    if s >= 0:
        if s > LEFT_CAP:
            s = LEFT_CAP
        v = entry << s
        if v > ACC_MAX:
            v = ACC_MAX
            sat[0] += 1
        return v
    sh = -s
    if sh > RIGHT_CAP:
        sh = RIGHT_CAP
    return (entry + (<long long>1 << (sh - 1))) >> sh


def integrate_dense(spike_ids, spike_dts, sign, grid, lut, fg, c_w, c_t, shift_base, acc):
    """Same contract as fallback.integrate_dense."""
    cdef const long long[::1] ids = np.ascontiguousarray(spike_ids, dtype=np.int64)
    cdef const long long[::1] dts = np.ascontiguousarray(spike_dts, dtype=np.int64)
    cdef const signed char[:, ::1] sg = sign
    cdef const int[:, ::1] gr = grid
    cdef const long long[::1] lt = lut
    cdef long long[::1] out = acc
    cdef long long cfg = fg, ccw = c_w, cct = c_t, csb = shift_base
    cdef Py_ssize_t n = ids.shape[0]
    cdef Py_ssize_t width = out.shape[0]
    cdef Py_ssize_t i, j, sid
    cdef long long dt, units, sat = 0
    cdef signed char s
    with nogil:
        for i in range(n):
            sid = ids[i]
            dt = dts[i]
            for j in range(width):
                s = sg[sid, j]
                if s == 0:
                    continue
                units = ccw * gr[sid, j] - cct * dt
                if s > 0:
                    out[j] += _product(units, lt, cfg, csb, &sat)
                else:
                    out[j] -= _product(units, lt, cfg, csb, &sat)
    return int(sat)


def integrate_sparse(spike_ids, spike_dts, indptr, indices, sign, grid, lut, fg, c_w,
                     c_t, shift_base, acc):
    """Same contract as fallback.integrate_sparse."""
    cdef const long long[::1] ids = np.ascontiguousarray(spike_ids, dtype=np.int64)
    cdef const long long[::1] dts = np.ascontiguousarray(spike_dts, dtype=np.int64)
    cdef const long long[::1] ptr = indptr
    cdef const int[::1] idx = indices
    cdef const signed char[::1] sg = sign
    cdef const int[::1] gr = grid
    cdef const long long[::1] lt = lut
    cdef long long[::1] out = acc
    cdef long long cfg = fg, ccw = c_w, cct = c_t, csb = shift_base
    cdef Py_ssize_t n = ids.shape[0]
    cdef Py_ssize_t i, p, sid
    cdef long long dt, units, sat = 0
    cdef signed char s
    with nogil:
        for i in range(n):
            sid = ids[i]
            dt = dts[i]
            for p in range(ptr[sid], ptr[sid + 1]):
                s = sg[p]
                if s == 0:
                    continue
                units = ccw * gr[p] - cct * dt
                if s > 0:
                    out[idx[p]] += _product(units, lt, cfg, csb, &sat)
                else:
                    out[idx[p]] -= _product(units, lt, cfg, csb, &sat)
    return int(sat)
