# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the NumPy kernels in _pykernels.py.

Operation order deliberately mirrors the fallback: the split scan is
bit-identical (same stable argsort, same sequential accumulation, same
formula), the DFT agrees to rounding because the fallback sums via BLAS.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

# Twiddle tables per series length, built with the same numpy expressions as
# the fallback so both backends read identical factors.
_twiddle_cache = {}


def _twiddles(Py_ssize_t n):
    cached = _twiddle_cache.get(n)
    if cached is None:
        k = np.arange(n // 2 + 1, dtype=np.float64)
        ang = np.outer(k, np.arange(n, dtype=np.float64)) * (-2.0 * np.pi / n)
        cached = (
            np.ascontiguousarray(np.cos(ang)),
            np.ascontiguousarray(np.sin(ang)),
        )
        _twiddle_cache[n] = cached
    return cached


def dft_onesided(values):
    """One-sided DFT of a real series: bins k = 0 .. N//2 (direct O(N^2))."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] x = np.ascontiguousarray(
        values, dtype=np.float64
    )
    cdef Py_ssize_t n = x.shape[0]
    if n < 2:
        raise ValueError("dft_onesided requires at least 2 samples")
    cdef Py_ssize_t half = n // 2 + 1
    tables = _twiddles(n)
    cdef double[:, ::1] cos_t = tables[0]
    cdef double[:, ::1] sin_t = tables[1]
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] out = np.empty(half, dtype=np.complex128)
    cdef Py_ssize_t k, i
    cdef double re, im
    for k in range(half):
        re = 0.0
        im = 0.0
        for i in range(n):
            re += x[i] * cos_t[k, i]
            im += x[i] * sin_t[k, i]
        out[k] = re + 1j * im
    return out


def best_split_scan(x_in, y_in, w_in, double min_leaf_weight):
    """Exhaustive CART split search; see _pykernels.best_split_scan."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] x = np.ascontiguousarray(
        x_in, dtype=np.float64
    )
    cdef cnp.ndarray[cnp.int64_t, ndim=1] y = np.ascontiguousarray(
        y_in, dtype=np.int64
    )
    cdef cnp.ndarray[cnp.float64_t, ndim=1] w = np.ascontiguousarray(
        w_in, dtype=np.float64
    )
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t m = x.shape[1]

    cdef double total_w = 0.0, total_w1 = 0.0
    cdef Py_ssize_t i
    for i in range(n):
        total_w += w[i]
        if y[i] == 1:
            total_w1 += w[i]
    if total_w1 == 0.0 or total_w1 == total_w:
        return None
    if n < 2:
        return None
    cdef double p0 = (total_w - total_w1) / total_w
    cdef double p1 = total_w1 / total_w
    cdef double parent_gini = 1.0 - (p0 * p0 + p1 * p1)

    # Same stable argsort as the fallback so tied values accumulate in the
    # same order and both backends produce identical floats.
    cdef cnp.ndarray[cnp.int64_t, ndim=2] order = np.argsort(
        x, axis=0, kind="stable"
    ).astype(np.int64, copy=False)

    cdef Py_ssize_t col, row, idx
    cdef Py_ssize_t best_col = -1, best_boundary = -1
    cdef double best_dec = 0.0
    cdef bint found = False
    cdef double wl, wl1, wl0, wr, wr1, wr0
    cdef double tl0, tl1, tr0, tr1, gini_l, gini_r, dec
    cdef double v_here, v_next

    for col in range(m):
        wl = 0.0
        wl1 = 0.0
        for row in range(n - 1):
            idx = order[row, col]
            wl += w[idx]
            if y[idx] == 1:
                wl1 += w[idx]
            v_here = x[idx, col]
            v_next = x[order[row + 1, col], col]
            if not v_here < v_next:
                continue
            if wl < min_leaf_weight:
                continue
            wr = total_w - wl
            if wr < min_leaf_weight:
                continue
            wl0 = wl - wl1
            wr1 = total_w1 - wl1
            wr0 = wr - wr1
            tl0 = wl0 / wl
            tl1 = wl1 / wl
            tr0 = wr0 / wr
            tr1 = wr1 / wr
            gini_l = 1.0 - (tl0 * tl0 + tl1 * tl1)
            gini_r = 1.0 - (tr0 * tr0 + tr1 * tr1)
            dec = parent_gini - (wl * gini_l + wr * gini_r) / total_w
            if not found or dec > best_dec:
                found = True
                best_dec = dec
                best_col = col
                best_boundary = row

    if not found:
        return None
    idx = order[best_boundary, best_col]
    cdef double v_lo = x[idx, best_col]
    cdef double v_hi = x[order[best_boundary + 1, best_col], best_col]
    return int(best_col), 0.5 * (v_lo + v_hi), best_dec
