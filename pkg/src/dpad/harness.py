"""Data ingestion, chronological splitting, and window generation.

CSV files carry a timestamp in the first column and one numeric channel per
remaining column. Splits are contiguous chronological segments; windows are
generated within a segment only, so no window ever crosses a split boundary.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

__all__ = ["Dataset", "WindowSet", "load_csv", "split_chronological", "make_windows",
           "write_components_csv", "read_components_csv", "dominant_fft_bin"]


@dataclass
class Dataset:
    """Aligned named channels with their timestamps."""

    names: list[str]
    values: np.ndarray            # (length, channels) float64
    timestamps: list[str]
    frequency: str | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"values must be 2-D, got shape {self.values.shape}")
        if self.values.shape[1] != len(self.names):
            raise ValueError(f"{len(self.names)} channel names for "
                             f"{self.values.shape[1]} value columns")
        if len(self.timestamps) != self.values.shape[0]:
            raise ValueError("timestamps and values must have equal length")

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def channel(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]


@dataclass
class WindowSet:
    """Sliding (input, target) pairs cut from one contiguous segment."""

    inputs: np.ndarray   # (count, T, channels)
    targets: np.ndarray  # (count, H, channels)
    stride: int = 1

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def channel_pairs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Flatten to univariate (window, target) pairs, window-major."""
        pairs = []
        for i in range(self.inputs.shape[0]):
            for c in range(self.inputs.shape[2]):
                pairs.append((self.inputs[i, :, c], self.targets[i, :, c]))
        return pairs


def _timestamp_key(raw: str):
    try:
        return (0, float(raw))
    except ValueError:
        return (1, raw)


def load_csv(path, fill: str | None = None, frequency: str | None = None) -> Dataset:
    """Parse a timestamp-plus-channels CSV into a Dataset.

    Missing cells are rejected unless fill="forward", which repeats the
    previous row's value. Errors name the offending row and column;
    timestamps must be strictly increasing.
    """
    if fill not in (None, "forward"):
        raise ValueError(f"fill must be None or 'forward', got {fill!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: file is empty") from None
        if len(header) < 2:
            raise ValueError(f"{path}: need a timestamp column plus at least one channel")
        names = [h.strip() for h in header[1:]]
        timestamps: list[str] = []
        rows: list[list[float]] = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}: row {line_no}: expected {len(header)} fields, "
                                 f"got {len(row)}")
            timestamps.append(row[0].strip())
            parsed = []
            for j, cell in enumerate(row[1:]):
                cell = cell.strip()
                if cell == "":
                    if fill == "forward" and rows:
                        parsed.append(rows[-1][j])
                        continue
                    raise ValueError(f"{path}: row {line_no}, column {names[j]!r}: "
                                     f"missing value")
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ValueError(f"{path}: row {line_no}, column {names[j]!r}: "
                                     f"could not parse {cell!r}") from None
            rows.append(parsed)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    keys = [_timestamp_key(t) for t in timestamps]
    for i in range(1, len(keys)):
        if keys[i] <= keys[i - 1]:
            raise ValueError(f"{path}: row {i + 2}: timestamp {timestamps[i]!r} is not "
                             f"after {timestamps[i - 1]!r}")
    values = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise ValueError(f"{path}: row {int(bad[0]) + 2}, column {names[int(bad[1])]!r}: "
                         f"non-finite value")
    return Dataset(names=names, values=values, timestamps=timestamps, frequency=frequency)


def split_chronological(ds: Dataset, ratios: tuple[float, float, float],
                        min_length: int | None = None) -> tuple[Dataset, Dataset, Dataset]:
    """Cut the dataset into contiguous train/val/test segments.

    Boundary indices are cumulative floors of ratio * length, so rounding
    remainders land in the test segment. With min_length set (typically
    T + H), a too-short segment is a configuration error.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {sum(ratios)}")
    n = len(ds)
    a = int(np.floor(ratios[0] * n))
    b = int(np.floor((ratios[0] + ratios[1]) * n))
    bounds = [(0, a), (a, b), (b, n)]
    parts = []
    for (lo, hi), label in zip(bounds, ("train", "val", "test")):
        if min_length is not None and hi - lo < min_length:
            raise ValueError(f"{label} split has {hi - lo} rows, need at least {min_length}")
        parts.append(Dataset(names=list(ds.names), values=ds.values[lo:hi].copy(),
                             timestamps=ds.timestamps[lo:hi], frequency=ds.frequency))
    return tuple(parts)


def make_windows(ds: Dataset, lookback: int, horizon: int, stride: int = 1) -> WindowSet:
    """Sliding windows: count = floor((N - T - H) / stride) + 1."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    n = len(ds)
    span = lookback + horizon
    if n < span:
        raise ValueError(f"dataset of length {n} is too short for lookback {lookback} "
                         f"+ horizon {horizon}")
    count = (n - span) // stride + 1
    inputs = np.empty((count, lookback, ds.channels))
    targets = np.empty((count, horizon, ds.channels))
    for i in range(count):
        start = i * stride
        inputs[i] = ds.values[start:start + lookback]
        targets[i] = ds.values[start + lookback:start + span]
    return WindowSet(inputs=inputs, targets=targets, stride=stride)


def write_components_csv(path, matrix: np.ndarray, column_names: list[str] | None = None):
    """Serialize a (T, K) component stack: header t,imf1..imf{K-1},residual.

    `column_names` overrides the default header (used for multi-leaf
    exports). Values are written with 17 significant digits so a read
    round-trips float64 losslessly.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] < 2:
        raise ValueError(f"expected a (T, K>=2) matrix, got shape {matrix.shape}")
    k = matrix.shape[1]
    if column_names is None:
        column_names = [f"imf{i}" for i in range(1, k)] + ["residual"]
    if len(column_names) != k:
        raise ValueError(f"{len(column_names)} column names for {k} columns")
    header = ["t"] + list(column_names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(matrix.shape[0]):
            writer.writerow([t] + [f"{v:.17g}" for v in matrix[t]])


def read_components_csv(path) -> np.ndarray:
    """Read back a component CSV written by write_components_csv."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(cell) for cell in row[1:]] for row in reader]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    matrix = np.asarray(rows, dtype=np.float64)
    if matrix.shape[1] != len(header) - 1:
        raise ValueError(f"{path}: ragged component rows")
    return matrix


def dominant_fft_bin(series: np.ndarray) -> int:
    """Index of the largest-magnitude rFFT bin (bin 0 is the mean)."""
    return int(np.argmax(np.abs(np.fft.rfft(np.asarray(series, dtype=np.float64)))))
