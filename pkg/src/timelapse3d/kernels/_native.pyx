# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled implementations of the hot kernels.

Semantics match kernels._fallback exactly (same window, variance, median
and tie-break rules); see that module's docstring for the contract.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


cdef inline void _insertion_sort(double* buf, int n) noexcept nogil:
    cdef int i, j
    cdef double key
    for i in range(1, n):
        key = buf[i]
        j = i - 1
        while j >= 0 and buf[j] > key:
            buf[j + 1] = buf[j]
            j -= 1
        buf[j + 1] = key


def aggregate_plane(warped, valid, double var_eps=1e-8):
    """Median-of-medians NCC cost for one sweep plane; see _fallback."""
    cdef double[:, :, ::1] w = np.ascontiguousarray(warped, dtype=np.float64)
    cdef unsigned char[:, :, ::1] v = np.ascontiguousarray(
        np.asarray(valid, dtype=np.uint8)
    )
    cdef int n = w.shape[0]
    cdef int h = w.shape[1]
    cdef int ww = w.shape[2]

    cost_arr = np.ones((h, ww), dtype=np.float64)
    count_arr = np.zeros((h, ww), dtype=np.int32)
    cdef double[:, ::1] cost = cost_arr
    cdef int[:, ::1] count = count_arr

    mu_arr = np.empty(n, dtype=np.float64)
    var_arr = np.empty(n, dtype=np.float64)
    ok_arr = np.empty(n, dtype=np.uint8)
    rowbuf_arr = np.empty((n, n), dtype=np.float64)
    rowlen_arr = np.empty(n, dtype=np.int32)
    meds_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] mu = mu_arr
    cdef double[::1] var = var_arr
    cdef unsigned char[::1] ok = ok_arr
    cdef double[:, ::1] rowbuf = rowbuf_arr
    cdef int[::1] rowlen = rowlen_arr
    cdef double[::1] meds = meds_arr

    cdef int x, y, i, a, b, dy, dx, pairs, nmeds
    cdef double s1, s2, sab, val, va, vb, cov, c
    cdef bint good

    with nogil:
        for y in range(1, h - 1):
            for x in range(1, ww - 1):
                for i in range(n):
                    good = True
                    s1 = 0.0
                    s2 = 0.0
                    for dy in range(-1, 2):
                        for dx in range(-1, 2):
                            if not v[i, y + dy, x + dx]:
                                good = False
                                break
                            val = w[i, y + dy, x + dx]
                            s1 += val
                            s2 += val * val
                        if not good:
                            break
                    ok[i] = good
                    if good:
                        mu[i] = s1 / 9.0
                        var[i] = s2 / 9.0 - mu[i] * mu[i]
                        if var[i] < 0.0:
                            var[i] = 0.0

                pairs = 0
                for a in range(n):
                    rowlen[a] = 0
                for a in range(n):
                    if not ok[a]:
                        continue
                    for b in range(a + 1, n):
                        if not ok[b]:
                            continue
                        va = var[a]
                        vb = var[b]
                        if va < var_eps or vb < var_eps:
                            c = 1.0
                        else:
                            sab = 0.0
                            for dy in range(-1, 2):
                                for dx in range(-1, 2):
                                    sab += (
                                        w[a, y + dy, x + dx]
                                        * w[b, y + dy, x + dx]
                                    )
                            cov = sab / 9.0 - mu[a] * mu[b]
                            c = 1.0 - cov / sqrt(va * vb)
                            if c < 0.0:
                                c = 0.0
                            elif c > 2.0:
                                c = 2.0
                        rowbuf[a, rowlen[a]] = c
                        rowlen[a] += 1
                        rowbuf[b, rowlen[b]] = c
                        rowlen[b] += 1
                        pairs += 1

                count[y, x] = pairs
                if pairs == 0:
                    cost[y, x] = 1.0
                    continue
                nmeds = 0
                for a in range(n):
                    if rowlen[a] > 0:
                        _insertion_sort(&rowbuf[a, 0], rowlen[a])
                        meds[nmeds] = rowbuf[a, (rowlen[a] - 1) // 2]
                        nmeds += 1
                _insertion_sort(&meds[0], nmeds)
                cost[y, x] = meds[(nmeds - 1) // 2]
    return cost_arr, count_arr


def zbuffer_scatter(ix, iy, depth, value, deriv, src_index, int width, int height):
    """Min-depth scatter; ties keep the earliest entry. See _fallback."""
    cdef cnp.int64_t[::1] cix = np.ascontiguousarray(ix, dtype=np.int64)
    cdef cnp.int64_t[::1] ciy = np.ascontiguousarray(iy, dtype=np.int64)
    cdef double[::1] cd = np.ascontiguousarray(depth, dtype=np.float64)
    cdef double[::1] cv = np.ascontiguousarray(value, dtype=np.float64)
    cdef double[::1] cg = np.ascontiguousarray(deriv, dtype=np.float64)
    cdef cnp.int64_t[::1] cs = np.ascontiguousarray(src_index, dtype=np.int64)

    zbuf_arr = np.full((height, width), np.inf, dtype=np.float64)
    val_arr = np.zeros((height, width), dtype=np.float64)
    dval_arr = np.zeros((height, width), dtype=np.float64)
    win_arr = np.full((height, width), -1, dtype=np.int64)
    cdef double[:, ::1] zbuf = zbuf_arr
    cdef double[:, ::1] val = val_arr
    cdef double[:, ::1] dval = dval_arr
    cdef cnp.int64_t[:, ::1] win = win_arr

    cdef Py_ssize_t k, n = cix.shape[0]
    cdef cnp.int64_t px, py
    with nogil:
        for k in range(n):
            px = cix[k]
            py = ciy[k]
            if cd[k] < zbuf[py, px]:
                zbuf[py, px] = cd[k]
                val[py, px] = cv[k]
                dval[py, px] = cg[k]
                win[py, px] = cs[k]
    return zbuf_arr, val_arr, dval_arr, win_arr
