"""Morphological operators on 1-D series.

Dilation and erosion are sliding maximum/minimum filters with an additive
structuring-element (SE) kernel; their elementwise average is the
morphological mean envelope used by the decomposition in place of
interpolation-based envelopes. Boundaries are handled by replicate padding
so envelopes never leave the sample range. All operators are pure functions
on float64 arrays and safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = ["SEKernel", "dilate", "erode", "mean_envelope",
           "dilate_argmax", "erode_argmin", "envelopes"]


@dataclass(frozen=True)
class SEKernel:
    """Symmetric additive structuring-element kernel of odd length 2C+1.

    The zero kernel (all offsets 0) turns dilation/erosion into pure
    max/min filters and is the only kernel constructed by default. Nonzero
    symmetric offsets are accepted for experimentation.
    """

    half_width: int
    offsets: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.half_width < 0:
            raise ValueError(f"half_width must be >= 0, got {self.half_width}")
        if self.offsets is None:
            object.__setattr__(self, "offsets", np.zeros(2 * self.half_width + 1))
        offs = np.asarray(self.offsets, dtype=np.float64)
        if offs.ndim != 1 or offs.shape[0] != 2 * self.half_width + 1:
            raise ValueError(
                f"offsets must have odd length {2 * self.half_width + 1}, got shape {offs.shape}")
        if not np.all(np.isfinite(offs)):
            raise ValueError("kernel offsets must be finite")
        if not np.array_equal(offs, offs[::-1]):
            raise ValueError("kernel offsets must be symmetric")
        object.__setattr__(self, "offsets", offs)
        object.__setattr__(self, "is_zero", not np.any(offs))

    @classmethod
    def zero(cls, half_width: int = 1) -> "SEKernel":
        """The zero SE kernel of length 2*half_width + 1."""
        return cls(half_width=half_width)

    @classmethod
    def from_length(cls, length: int) -> "SEKernel":
        """Zero kernel from an odd window length (e.g. the config's kernel size)."""
        if length < 1 or length % 2 == 0:
            raise ValueError(f"kernel length must be odd and >= 1, got {length}")
        return cls(half_width=(length - 1) // 2)

    def widened(self, repeats: int) -> "SEKernel":
        """Kernel equivalent to `repeats` successive applications of this one.

        Only defined for the zero kernel, where k applications of a length
        2C+1 max/min filter equal one application with half-width k*C.
        """
        if np.any(self.offsets != 0.0):
            raise ValueError("widened() is only defined for the zero kernel")
        return SEKernel.zero(self.half_width * max(1, int(repeats)))

    def __len__(self) -> int:
        return 2 * self.half_width + 1


def _check_series(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] < 1:
        raise ValueError(f"expected a non-empty 1-D series, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    return x


def _replicate_pad(x: np.ndarray, c: int) -> np.ndarray:
    out = np.empty(x.shape[0] + 2 * c)
    out[:c] = x[0]
    out[c:c + x.shape[0]] = x
    out[c + x.shape[0]:] = x[-1]
    return out


def _padded_windows(x: np.ndarray, c: int) -> np.ndarray:
    """(T, 2C+1) view of replicate-padded windows; column j is offset j-C."""
    if c == 0:
        return x[:, None]
    return sliding_window_view(_replicate_pad(x, c), 2 * c + 1)


def envelopes(x: np.ndarray, kernel: SEKernel, winners: bool = False):
    """Upper and lower envelopes from one shared window pass, no input checks.

    Returns (upper, lower, upper_winners, lower_winners); the winner arrays
    are None unless requested. Winner indices resolve ties to the lowest
    window position and are clipped into [0, T-1], so replicated edge
    samples route to the boundary sample they copy.
    """
    c = kernel.half_width
    win = _padded_windows(x, c)
    if kernel.is_zero:
        vu = vl = win
    else:
        vu = win + kernel.offsets
        vl = win - kernel.offsets
    if not winners:
        return vu.max(axis=1), vl.min(axis=1), None, None
    rows = np.arange(x.shape[0])
    ju = np.argmax(vu, axis=1)
    jl = np.argmin(vl, axis=1)
    upper = vu[rows, ju]
    lower = vl[rows, jl]
    top = x.shape[0] - 1
    return upper, lower, np.clip(rows + ju - c, 0, top), np.clip(rows + jl - c, 0, top)


def dilate(x: np.ndarray, kernel: SEKernel) -> np.ndarray:
    """Morphological dilation: out[t] = max_w (x[t+w] + offsets[w]), w in [-C, C].

    Edge samples are replicate-padded, so the output length equals the
    input length and dilate(x) >= x holds elementwise for the zero kernel.
    """
    x = _check_series(x)
    return envelopes(x, kernel)[0]


def erode(x: np.ndarray, kernel: SEKernel) -> np.ndarray:
    """Morphological erosion: out[t] = min_w (x[t+w] - offsets[w]), w in [-C, C].

    Dual of dilation: erode(x, k) == -dilate(-x, k) bitwise.
    """
    x = _check_series(x)
    return envelopes(x, kernel)[1]


def mean_envelope(x: np.ndarray, kernel: SEKernel) -> np.ndarray:
    """Average of the dilated (upper) and eroded (lower) envelopes."""
    x = _check_series(x)
    upper, lower, _, _ = envelopes(x, kernel)
    return 0.5 * (upper + lower)


def dilate_argmax(x: np.ndarray, kernel: SEKernel) -> tuple[np.ndarray, np.ndarray]:
    """Dilation values plus the input index that won each window.

    Used for subgradient routing when the filter sits inside a
    differentiation graph; see `envelopes` for the tie and edge rules.
    """
    x = _check_series(x)
    upper, _, up_win, _ = envelopes(x, kernel, winners=True)
    return upper, up_win


def erode_argmin(x: np.ndarray, kernel: SEKernel) -> tuple[np.ndarray, np.ndarray]:
    """Erosion values plus the winning input index per window (first-wins ties)."""
    x = _check_series(x)
    _, lower, _, lo_win = envelopes(x, kernel, winners=True)
    return lower, lo_win
