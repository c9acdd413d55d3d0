"""dpad: frequency-disentangling decomposition and forecasting for time series.

The package decomposes a series into components of distinct frequency ranges
with morphological (max/min filter) envelopes instead of interpolation, feeds
the components through a tree of guided decomposition-reconstruction blocks,
fuses them with a graph head, and forecasts with an MLP. Everything is
differentiable end to end on a small numpy reverse-mode engine.
"""

from dpad.morph import SEKernel, dilate, erode, mean_envelope
from dpad.memd import NoMoreIMFs, relative_tolerance, sift_once, extract_imf, mcd_decompose
from dpad.nnkernel import DiffValue, ParameterSet, no_grad
from dpad.pipeline import ModelConfig, DPadModel, train, evaluate, l1_loss
from dpad.harness import Dataset, WindowSet, load_csv, split_chronological, make_windows

__version__ = "0.1.0"

__all__ = [
    "SEKernel", "dilate", "erode", "mean_envelope",
    "NoMoreIMFs", "relative_tolerance", "sift_once", "extract_imf", "mcd_decompose",
    "DiffValue", "ParameterSet", "no_grad",
    "ModelConfig", "DPadModel", "train", "evaluate", "l1_loss",
    "Dataset", "WindowSet", "load_csv", "split_chronological", "make_windows",
    "__version__",
]
