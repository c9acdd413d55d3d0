"""Morphological empirical mode decomposition (the EMP loop).

A series is decomposed into oscillatory components (IMFs) plus a residual by
iterative sifting: subtract the morphological mean envelope from the working
signal until a Cauchy-type relative tolerance accepts the candidate, then
repeat on the residual. The envelope's max/min window is the base
structuring-element kernel applied an adaptive number of times per sift:
the repeat count tracks the mean spacing of the signal's significant extrema
(a swing filter at a fixed fraction of the input's range), so a tone is
captured whole instead of being nibbled away by a too-narrow window.
Extraction stops when no significant oscillation remains, which keeps
late columns free of envelope-quantization debris.

Functions accept either plain float64 arrays or DiffValue nodes; with nodes,
gradients flow through the sifting path executed in the forward pass (window
widths, sift counts, and stop decisions are data-dependent constants of that
pass).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from dpad import nnkernel as nk
from dpad.morph import SEKernel, envelopes
from dpad.nnkernel import DiffValue

__all__ = ["NoMoreIMFs", "DegenerateSignalError", "relative_tolerance",
           "sift_once", "extract_imf", "mcd_decompose",
           "ENVELOPE_SPAN_FACTOR", "EXTREMA_SIGNIFICANCE"]

# Envelope window half-width per sift = ENVELOPE_SPAN_FACTOR x the mean gap
# between significant extrema. 1.5 guarantees that every point of a clean
# tone sees both a crest and a trough inside its window (worst case 1.5
# half-periods away), which makes the tone's mean envelope vanish.
ENVELOPE_SPAN_FACTOR = 1.5

# An extremum counts as significant when the swing to the previously kept
# extremum is at least this fraction of the decomposed input's value range.
# Filters the sawtooth debris that max/min envelopes leave behind (~10% of
# an extracted component) so it neither drives the window width nor spawns
# spurious extra IMFs.
EXTREMA_SIGNIFICANCE = 0.1


class NoMoreIMFs(Exception):
    """The working signal holds no further extractable oscillation."""


class DegenerateSignalError(ValueError):
    """Relative tolerance is undefined: the previous candidate has zero norm."""


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, DiffValue) else np.asarray(x, dtype=np.float64)


def relative_tolerance(prev: np.ndarray, cur: np.ndarray) -> float:
    """Cauchy-type sifting criterion: ||prev - cur||^2 / ||prev||^2.

    The candidate is accepted as an IMF when the result is <= 0.2.

    Raises:
        DegenerateSignalError: ||prev||^2 == 0 (caller treats the working
            signal as residual).
    """
    prev = _data(prev)
    cur = _data(cur)
    if prev.shape != cur.shape:
        raise ValueError(f"length mismatch: {prev.shape} vs {cur.shape}")
    denom = float(np.sum(prev * prev))
    if denom == 0.0:
        raise DegenerateSignalError("previous candidate has zero norm")
    diff = prev - cur
    return float(np.sum(diff * diff)) / denom


def _sift_step(cur, kernel: SEKernel):
    """Candidate IMF cur - mean_envelope(cur, kernel); no input validation."""
    if isinstance(cur, DiffValue):
        return nk.sub(cur, nk.mean_envelope(cur, kernel))
    upper, lower, _, _ = envelopes(cur, kernel)
    return cur - 0.5 * (upper + lower)


def sift_once(s, kernel: SEKernel):
    """One sifting step: the candidate IMF s - mean_envelope(s, kernel)."""
    if isinstance(s, DiffValue):
        return nk.sub(s, nk.mean_envelope(s, kernel))
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 1 or s.shape[0] < 1:
        raise ValueError(f"expected a non-empty 1-D series, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("series contains non-finite values")
    return _sift_step(s, kernel)


def _strict_extrema(x: np.ndarray):
    """Positions, values and kind (True=max) of strict interior extrema, in order."""
    if x.shape[0] < 3:
        return (np.empty(0, dtype=np.intp), np.empty(0), np.empty(0, dtype=bool))
    interior = x[1:-1]
    mx = np.nonzero((interior > x[:-2]) & (interior > x[2:]))[0] + 1
    mn = np.nonzero((interior < x[:-2]) & (interior < x[2:]))[0] + 1
    pos = np.concatenate([mx, mn])
    kind = np.concatenate([np.ones(mx.shape[0], bool), np.zeros(mn.shape[0], bool)])
    order = np.argsort(pos, kind="stable")
    return pos[order], x[pos[order]], kind[order]


def significant_extrema(x: np.ndarray, swing: float) -> np.ndarray:
    """Positions of alternating extrema whose swings reach `swing` (zigzag filter).

    Consecutive extrema of the same kind keep only the more extreme one; an
    opposite-kind extremum is kept when it moves at least `swing` away from
    the last kept value.
    """
    pos, val, kind = _strict_extrema(x)
    if pos.shape[0] == 0:
        return pos
    kp = [pos[0]]
    kv = [val[0]]
    kk = [kind[0]]
    for p, v, k in zip(pos[1:], val[1:], kind[1:]):
        if k == kk[-1]:
            if (k and v > kv[-1]) or (not k and v < kv[-1]):
                kp[-1], kv[-1] = p, v
        elif abs(v - kv[-1]) >= swing:
            kp.append(p)
            kv.append(v)
            kk.append(k)
    return np.asarray(kp, dtype=np.intp)


@lru_cache(maxsize=None)
def _zero_kernel(half_width: int) -> SEKernel:
    return SEKernel.zero(half_width)


def _sift_kernel(cur: np.ndarray, base: SEKernel, swing: float) -> SEKernel | None:
    """Adaptive kernel for the next sift, or None when the signal is degenerate."""
    pos = significant_extrema(cur, swing)
    if pos.shape[0] < 2:
        return None
    if not base.is_zero:
        return base  # nonzero kernels are applied as given, no widening
    mean_gap = float(np.mean(np.diff(pos)))
    reps = max(1, int(round(ENVELOPE_SPAN_FACTOR * mean_gap)))
    cap = max(1, cur.shape[0] // max(1, base.half_width))
    return _zero_kernel(base.half_width * min(reps, cap))


def extract_imf(s, kernel: SEKernel, rt_threshold: float = 0.2, max_sift: int = 10,
                significance_scale: float | None = None):
    """Extract one IMF from `s` by iterated sifting.

    The candidate is accepted once the relative tolerance against the
    previous candidate drops to `rt_threshold`, or after `max_sift` sifts.
    The accepted IMF is demeaned (its sample mean belongs to the residual's
    central tendency), and residual = s - imf exactly.

    `significance_scale` overrides the value range used for the extrema
    swing filter; the decomposition loop passes the original input's range
    so termination does not drift as residuals shrink.

    Raises:
        NoMoreIMFs: fewer than 2 significant extrema, or the candidate's
            norm collapsed to numerical zero.
    """
    if max_sift < 1:
        raise ValueError(f"max_sift must be >= 1, got {max_sift}")
    sd = _data(s)
    scale = float(sd.max() - sd.min()) if significance_scale is None else significance_scale
    swing = EXTREMA_SIGNIFICANCE * scale
    input_norm = float(np.sqrt(np.sum(sd * sd)))

    prev = sd
    cur = s
    cand = None
    for _ in range(max_sift):
        k_eff = _sift_kernel(_data(cur), kernel, swing)
        if k_eff is None:
            raise NoMoreIMFs("fewer than 2 significant extrema")
        cand = _sift_step(cur, k_eff)
        cd = _data(cand)
        if float(np.sqrt(np.sum(cd * cd))) < 1e-12 * input_norm:
            raise NoMoreIMFs("candidate norm is numerically zero")
        try:
            rt = relative_tolerance(prev, cd)
        except DegenerateSignalError as exc:
            raise NoMoreIMFs(str(exc)) from exc
        if rt <= rt_threshold:
            break
        prev = cd
        cur = cand

    if isinstance(s, DiffValue):
        imf = nk.demean(cand)
        residual = nk.sub(s, imf)
    else:
        imf = _data(cand) - _data(cand).mean()
        residual = sd - imf
    return imf, residual


def mcd_decompose(x, count: int, kernel: SEKernel | None = None,
                  max_sift: int = 10, rt_threshold: float = 0.2):
    """Decompose `x` into a (T, count) stack of IMFs plus residual.

    IMFs are extracted from the running residual until count-1 are found or
    no significant oscillation remains. Columns hold the IMFs in extraction
    order (descending dominant frequency), the final column holds the
    residual, and any unused columns in between are zero so the output width
    is always exactly `count`. Columns sum to the input to f64 accuracy.
    """
    if count < 2:
        raise ValueError(f"component count must be >= 2, got {count}")
    kernel = kernel or SEKernel.zero(1)
    xd = _data(x)
    if xd.ndim != 1:
        raise ValueError(f"expected a 1-D series, got shape {xd.shape}")
    if xd.shape[0] < 2 * kernel.half_width + 1:
        raise ValueError(
            f"series of length {xd.shape[0]} is shorter than the kernel window "
            f"{2 * kernel.half_width + 1}")
    if not np.all(np.isfinite(xd)):
        raise ValueError("series contains non-finite values")

    scale = float(xd.max() - xd.min())
    graph_mode = isinstance(x, DiffValue)
    imfs = []
    residual = x
    for _ in range(count - 1):
        try:
            imf, residual = extract_imf(residual, kernel, rt_threshold=rt_threshold,
                                        max_sift=max_sift, significance_scale=scale)
        except NoMoreIMFs:
            break
        imfs.append(imf)

    n_pad = count - 1 - len(imfs)
    if graph_mode:
        zeros = [nk.constant(np.zeros(xd.shape[0])) for _ in range(n_pad)]
        return nk.stack_cols(imfs + zeros + [residual])
    out = np.zeros((xd.shape[0], count))
    for i, imf in enumerate(imfs):
        out[:, i] = imf
    out[:, count - 1] = _data(residual)
    return out
