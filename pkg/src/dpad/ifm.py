"""Interaction and fusion over disentangled components.

Each component is a graph node. Node embeddings learned from the components
produce a self-adaptive adjacency (row-normalized to the 1-simplex); graph
convolution mixes node features along it, optionally over several graphs
whose outputs are concatenated and skip-connected, and a final per-node
projection plus node sum fuses everything into one feature vector. With the
interaction head disabled, the skip path alone feeds the fusion projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dpad import nnkernel as nk
from dpad.nnkernel import DiffValue, ParameterSet

__all__ = ["GraphParams", "IFParams", "build_if_params", "adaptive_adjacency",
           "graph_conv", "multi_graph_fuse", "if_forward"]


@dataclass
class GraphParams:
    """Embedding maps and convolution weight of one graph."""

    e1_w: DiffValue  # (d_em, T)
    e1_b: DiffValue  # (d_em,)
    e2_w: DiffValue  # (d_em, T)
    e2_b: DiffValue  # (d_em,)
    conv_w: DiffValue  # (d_mid, d_in)


@dataclass
class IFParams:
    """All learned pieces of the interaction/fusion head."""

    input_w: DiffValue   # (d_in, T)
    input_b: DiffValue   # (d_in,)
    graphs: list[GraphParams]
    fuse_w: DiffValue    # (d_out, d_in)
    fuse_b: DiffValue    # (d_out,)
    adjacency_axis: str = "rows"


def build_if_params(ps: ParameterSet, *, length: int, embed_dim: int, in_dim: int,
                    mid_dim: int, out_dim: int, num_graphs: int,
                    rng: np.random.Generator, disable_graphs: bool = False,
                    adjacency_axis: str = "rows") -> IFParams:
    if not disable_graphs and num_graphs * mid_dim != in_dim:
        raise ValueError(
            f"num_graphs * mid_dim must equal in_dim for the skip connection, "
            f"got {num_graphs} * {mid_dim} != {in_dim}")
    if adjacency_axis not in ("rows", "cols"):
        raise ValueError(f"adjacency_axis must be 'rows' or 'cols', got {adjacency_axis!r}")
    graphs = []
    if not disable_graphs:
        for j in range(num_graphs):
            graphs.append(GraphParams(
                e1_w=ps.create(f"ifm.g{j}.e1.w", nk.uniform_init(rng, (embed_dim, length), length)),
                e1_b=ps.create(f"ifm.g{j}.e1.b", nk.uniform_init(rng, (embed_dim,), length)),
                e2_w=ps.create(f"ifm.g{j}.e2.w", nk.uniform_init(rng, (embed_dim, length), length)),
                e2_b=ps.create(f"ifm.g{j}.e2.b", nk.uniform_init(rng, (embed_dim,), length)),
                conv_w=ps.create(f"ifm.g{j}.conv.w", nk.uniform_init(rng, (mid_dim, in_dim), in_dim)),
            ))
    return IFParams(
        input_w=ps.create("ifm.input.w", nk.uniform_init(rng, (in_dim, length), length)),
        input_b=ps.create("ifm.input.b", nk.uniform_init(rng, (in_dim,), length)),
        graphs=graphs,
        fuse_w=ps.create("ifm.fuse.w", nk.uniform_init(rng, (out_dim, in_dim), in_dim)),
        fuse_b=ps.create("ifm.fuse.b", nk.uniform_init(rng, (out_dim,), in_dim)),
        adjacency_axis=adjacency_axis,
    )


def _as_node(x):
    if isinstance(x, DiffValue):
        return x, True
    return nk.constant(np.asarray(x, dtype=np.float64)), False


def adaptive_adjacency(e1, e2, axis: str = "rows"):
    """Self-adaptive adjacency: softmax(relu(E1^T E2)) normalized along `axis`.

    E1 and E2 are (d_em, N) node embeddings; the product is taken as
    E1^T @ E2 to land on an (N, N) adjacency. Rows (default) or columns sum
    to one.
    """
    a, was_node = _as_node(e1)
    b, _ = _as_node(e2)
    scores = nk.relu(nk.matmul(nk.transpose(a), b))
    if axis == "rows":
        adj = nk.softmax_rows(scores)
    elif axis == "cols":
        adj = nk.transpose(nk.softmax_rows(nk.transpose(scores)))
    else:
        raise ValueError(f"axis must be 'rows' or 'cols', got {axis!r}")
    return adj if was_node else adj.data


def graph_conv(z_in, adjacency, conv_w):
    """One graph convolution: relu(W_G @ Z_in @ A)."""
    z, was_node = _as_node(z_in)
    a, _ = _as_node(adjacency)
    w, _ = _as_node(conv_w)
    out = nk.relu(nk.matmul(w, nk.matmul(z, a)))
    return out if was_node else out.data


def multi_graph_fuse(z_in, components, params: IFParams):
    """Concatenated multi-graph output plus skip, projected per node and summed.

    `components` supplies the node embeddings for each graph's adjacency.
    With no graphs configured, the skip path (Z_in) alone is fused.
    """
    z, was_node = _as_node(z_in)
    comps, _ = _as_node(components)
    if params.graphs:
        mids = []
        for g in params.graphs:
            e1 = nk.affine_cols(comps, g.e1_w, g.e1_b)
            e2 = nk.affine_cols(comps, g.e2_w, g.e2_b)
            adj = adaptive_adjacency(e1, e2, params.adjacency_axis)
            mids.append(graph_conv(z, adj, g.conv_w))
        stacked = mids[0] if len(mids) == 1 else nk.concat_rows(mids)
        merged = nk.add(stacked, z)
    else:
        merged = z
    fused = nk.sum_axis1(nk.affine_cols(merged, params.fuse_w, params.fuse_b))
    return fused if was_node else fused.data


def if_forward(components, params: IFParams):
    """Project components to node features, interact, and fuse to one vector."""
    comps, was_node = _as_node(components)
    z_in = nk.affine_cols(comps, params.input_w, params.input_b)
    out = multi_graph_fuse(z_in, comps, params)
    return out if was_node else out.data
