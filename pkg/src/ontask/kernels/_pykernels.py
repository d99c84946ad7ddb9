"""NumPy implementations of the hot kernels.

These are the reference semantics; the compiled twin in _ckernels.pyx keeps
the same operation order so both backends agree (bit-for-bit for the split
scan, to ~1e-12 relative for the DFT, whose fallback uses BLAS matmuls).
"""

from __future__ import annotations

import numpy as np

_twiddle_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _twiddles(n: int) -> tuple[np.ndarray, np.ndarray]:
    cached = _twiddle_cache.get(n)
    if cached is None:
        k = np.arange(n // 2 + 1, dtype=np.float64)
        ang = np.outer(k, np.arange(n, dtype=np.float64)) * (-2.0 * np.pi / n)
        cached = (np.cos(ang), np.sin(ang))
        _twiddle_cache[n] = cached
    return cached


def dft_onesided(values: np.ndarray) -> np.ndarray:
    """One-sided DFT of a real series: bins k = 0 .. N//2.

    Direct O(N^2) evaluation of X_k = sum_n x_n * exp(-2*pi*i*k*n/N); series
    here are ~120 samples so the naive transform is plenty.
    """
    x = np.ascontiguousarray(values, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("dft_onesided expects a 1-D array")
    n = x.shape[0]
    if n < 2:
        raise ValueError("dft_onesided requires at least 2 samples")
    cos_t, sin_t = _twiddles(n)
    return cos_t @ x + 1j * (sin_t @ x)


def best_split_scan(
    x: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    min_leaf_weight: float,
) -> tuple[int, float, float] | None:
    """Exhaustive CART split search over the given feature columns.

    x is the (n, m) candidate-feature submatrix for one node, y the 0/1
    labels, w the sample weights. Thresholds are midpoints between
    consecutive distinct sorted values; children must each carry at least
    min_leaf_weight. Returns (column, threshold, gini_decrease) maximizing
    the weighted impurity decrease with ties broken toward the lower column
    then the lower threshold, or None when the node is pure or no valid
    threshold exists.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    n, m = x.shape

    w1 = np.where(y == 1, w, 0.0)
    total_w = float(np.cumsum(w)[-1])
    total_w1 = float(np.cumsum(w1)[-1])
    if total_w1 == 0.0 or total_w1 == total_w:
        return None
    if n < 2:
        return None
    p0 = (total_w - total_w1) / total_w
    p1 = total_w1 / total_w
    parent_gini = 1.0 - (p0 * p0 + p1 * p1)

    order = np.argsort(x, axis=0, kind="stable")
    xs = np.take_along_axis(x, order, axis=0)
    cw = np.cumsum(w[order], axis=0)[:-1]
    cw1 = np.cumsum(w1[order], axis=0)[:-1]

    valid = (
        (xs[:-1] < xs[1:])
        & (cw >= min_leaf_weight)
        & ((total_w - cw) >= min_leaf_weight)
    )
    if not valid.any():
        return None

    wl = cw
    wl1 = cw1
    wl0 = wl - wl1
    wr = total_w - wl
    wr1 = total_w1 - wl1
    wr0 = wr - wr1
    with np.errstate(divide="ignore", invalid="ignore"):
        tl0 = wl0 / wl
        tl1 = wl1 / wl
        tr0 = wr0 / wr
        tr1 = wr1 / wr
        gini_l = 1.0 - (tl0 * tl0 + tl1 * tl1)
        gini_r = 1.0 - (tr0 * tr0 + tr1 * tr1)
        decrease = parent_gini - (wl * gini_l + wr * gini_r) / total_w
    decrease = np.where(valid, decrease, -np.inf)

    flat = int(np.argmax(decrease.T))
    col, boundary = divmod(flat, n - 1)
    best = float(decrease[boundary, col])
    threshold = 0.5 * (float(xs[boundary, col]) + float(xs[boundary + 1, col]))
    return int(col), threshold, best
