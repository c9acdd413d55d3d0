"""Shared independent oracles for the test suite.

These deliberately avoid the library's own code paths: gradients come from
central finite differences, spectra from a direct O(N^2) DFT, and filters
from naive loops.
"""

import numpy as np


def numeric_grad(f, x, eps=1e-5):
    """Central finite differences of scalar-valued f with respect to array x."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        saved = x[idx]
        x[idx] = saved + eps
        hi = f()
        x[idx] = saved - eps
        lo = f()
        x[idx] = saved
        g[idx] = (hi - lo) / (2 * eps)
        it.iternext()
    return g


def max_rel_err(analytic, numeric, floor=1e-6):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def naive_dft_magnitudes(x):
    """Direct-sum DFT magnitudes for bins 0..N//2 (independent of np.fft)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    t = np.arange(n)
    mags = np.empty(n // 2 + 1)
    for k in range(n // 2 + 1):
        ang = -2.0 * np.pi * k * t / n
        mags[k] = np.hypot((x * np.cos(ang)).sum(), (x * np.sin(ang)).sum())
    return mags


def naive_dominant_bin(x):
    return int(np.argmax(naive_dft_magnitudes(x)))


def naive_sliding_extreme(x, c, offsets, mode):
    """O(T*C) reference for dilation ("max") / erosion ("min") with replicate padding."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    out = np.empty(n)
    for t in range(n):
        acc = -np.inf if mode == "max" else np.inf
        for w in range(-c, c + 1):
            src = min(max(t + w, 0), n - 1)
            v = x[src] + offsets[w + c] if mode == "max" else x[src] - offsets[w + c]
            acc = max(acc, v) if mode == "max" else min(acc, v)
        out[t] = acc
    return out
