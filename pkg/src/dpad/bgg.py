"""Branch guidance generation for decomposition-reconstruction blocks.

Two guidance signals steer how decomposed components are recombined into two
branch sequences: a key (one soft 2-way weight row per component, from a
projection network shared across components) and a query (the components
gated elementwise by a convolutional mask that captures local, time-varying
structure across neighboring components).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dpad import nnkernel as nk
from dpad.nnkernel import DiffValue, ParameterSet

__all__ = ["BGGParams", "build_bgg_params", "intra_projection", "inter_mask"]


@dataclass
class BGGParams:
    """Learned pieces of one branch guidance generator."""

    proj_w1: DiffValue   # (T, d)
    proj_b1: DiffValue   # (d,)
    proj_w2: DiffValue   # (d, d)
    proj_b2: DiffValue   # (d,)
    transform: DiffValue  # (d, 2)
    mask_kernels: DiffValue  # (K, O, K)
    mask_bias: DiffValue     # (K,)


def build_bgg_params(ps: ParameterSet, prefix: str, length: int, components: int,
                     hidden: int, mask_span: int, rng: np.random.Generator) -> BGGParams:
    return BGGParams(
        proj_w1=ps.create(f"{prefix}.proj.w1", nk.uniform_init(rng, (length, hidden), length)),
        proj_b1=ps.create(f"{prefix}.proj.b1", nk.uniform_init(rng, (hidden,), length)),
        proj_w2=ps.create(f"{prefix}.proj.w2", nk.uniform_init(rng, (hidden, hidden), hidden)),
        proj_b2=ps.create(f"{prefix}.proj.b2", nk.uniform_init(rng, (hidden,), hidden)),
        transform=ps.create(f"{prefix}.transform", nk.uniform_init(rng, (hidden, 2), hidden)),
        mask_kernels=ps.create(
            f"{prefix}.mask.kernels",
            nk.uniform_init(rng, (components, mask_span, components), mask_span * components)),
        mask_bias=ps.create(
            f"{prefix}.mask.bias",
            nk.uniform_init(rng, (components,), mask_span * components)),
    )


def _as_node(components) -> tuple[DiffValue, bool]:
    if isinstance(components, DiffValue):
        return components, True
    return nk.constant(np.asarray(components, dtype=np.float64)), False


def intra_projection(components, params: BGGParams):
    """Per-component soft branch weights: rows of softmax(MLP(component) @ transform).

    The same projection network is applied to every component (column), so
    the output is a (K, 2) key whose rows lie on the 1-simplex.
    """
    comps, was_node = _as_node(components)
    rows = nk.transpose(comps)  # (K, T): one row per component
    hidden = nk.mlp(rows, [(params.proj_w1, params.proj_b1), (params.proj_w2, params.proj_b2)])
    key = nk.softmax_rows(nk.matmul(hidden, params.transform))
    return key if was_node else key.data


def inter_mask(components, params: BGGParams):
    """Time-varying query: components gated by their convolutional guidance mask."""
    comps, was_node = _as_node(components)
    mask = nk.conv2d_components(comps, params.mask_kernels, params.mask_bias)
    query = nk.mul(comps, mask)
    return query if was_node else query.data
