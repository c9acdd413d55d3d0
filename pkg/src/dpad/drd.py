"""Decomposition-reconstruction tree.

A binary tree of D-R blocks: each block decomposes its input series into
components, generates branch guidance, and reconstructs two new series that
feed the next level. After the last reconstruction level, every leaf
sequence is decomposed once more, yielding 2^(L-1) * K disentangled
components. Blocks at the same level are data-independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dpad import nnkernel as nk
from dpad.bgg import BGGParams, build_bgg_params, inter_mask, intra_projection
from dpad.memd import mcd_decompose
from dpad.morph import SEKernel
from dpad.nnkernel import DiffValue, ParameterSet

__all__ = ["DRBlock", "DRDTree", "build_drd_tree", "dr_reconstruct",
           "dr_block_forward", "drd_forward"]


@dataclass
class DRBlock:
    """One decomposition-reconstruction block at (level, position)."""

    level: int
    position: int
    components: int
    kernel: SEKernel
    max_sift: int
    rt_threshold: float
    bgg: BGGParams
    branch_mlps: list[list[tuple[DiffValue, DiffValue]]]  # two [(w, b), (w, b)] stacks


@dataclass
class DRDTree:
    """D-R blocks by level (2^(l-1) at level l) plus the shared leaf-decomposition config."""

    levels: list[list[DRBlock]]
    depth: int
    components: int
    kernel: SEKernel
    max_sift: int
    rt_threshold: float
    stop_gradient: bool = False

    @property
    def leaf_count(self) -> int:
        return 2 ** (self.depth - 1)

    @property
    def output_columns(self) -> int:
        return self.leaf_count * self.components

    def blocks(self):
        for level in self.levels:
            yield from level


def _build_branch_mlp(ps: ParameterSet, prefix: str, length: int,
                      rng: np.random.Generator) -> list[tuple[DiffValue, DiffValue]]:
    w1 = ps.create(f"{prefix}.w1", nk.uniform_init(rng, (length, length), length))
    b1 = ps.create(f"{prefix}.b1", nk.uniform_init(rng, (length,), length))
    w2 = ps.create(f"{prefix}.w2", nk.uniform_init(rng, (length, length), length))
    b2 = ps.create(f"{prefix}.b2", nk.uniform_init(rng, (length,), length))
    return [(w1, b1), (w2, b2)]


def build_drd_tree(ps: ParameterSet, *, length: int, components: int, depth: int,
                   kernel: SEKernel, hidden: int, mask_span: int, max_sift: int,
                   rt_threshold: float, rng: np.random.Generator,
                   stop_gradient: bool = False) -> DRDTree:
    """Create the block tree: levels 1..depth-1 reconstruct, leaves re-decompose."""
    if depth < 1:
        raise ValueError(f"tree depth must be >= 1, got {depth}")
    levels = []
    for level in range(1, depth):
        blocks = []
        for pos in range(2 ** (level - 1)):
            prefix = f"drd.l{level}.b{pos}"
            bgg = build_bgg_params(ps, f"{prefix}.bgg", length, components,
                                   hidden, mask_span, rng)
            branches = [_build_branch_mlp(ps, f"{prefix}.branch{i}", length, rng)
                        for i in range(2)]
            blocks.append(DRBlock(level=level, position=pos, components=components,
                                  kernel=kernel, max_sift=max_sift,
                                  rt_threshold=rt_threshold, bgg=bgg,
                                  branch_mlps=branches))
        levels.append(blocks)
    return DRDTree(levels=levels, depth=depth, components=components, kernel=kernel,
                   max_sift=max_sift, rt_threshold=rt_threshold,
                   stop_gradient=stop_gradient)


def dr_reconstruct(query, key, block: DRBlock):
    """Weighted recombination P = Q K, then a per-branch time-mixing MLP.

    Returns the block's two branch series of the input length.
    """
    q, was_node = _as_node(query)
    k, _ = _as_node(key)
    p = nk.matmul(q, k)  # (T, 2)
    outs = tuple(nk.mlp(nk.col(p, i), block.branch_mlps[i]) for i in range(2))
    return outs if was_node else tuple(o.data for o in outs)


def _as_node(x):
    if isinstance(x, DiffValue):
        return x, True
    return nk.constant(np.asarray(x, dtype=np.float64)), False


def _decompose(x: DiffValue, cfg, stop_gradient: bool = False) -> DiffValue:
    xin = nk.constant(x.data) if stop_gradient else x
    return mcd_decompose(xin, cfg.components, cfg.kernel,
                         max_sift=cfg.max_sift, rt_threshold=cfg.rt_threshold)


def dr_block_forward(x, block: DRBlock, stop_gradient: bool = False):
    """Decompose one series, generate guidance, reconstruct two branch series."""
    xin, was_node = _as_node(x)
    comps = _decompose(xin, block, stop_gradient)
    key = intra_projection(comps, block.bgg)
    query = inter_mask(comps, block.bgg)
    outs = dr_reconstruct(query, key, block)
    return outs if was_node else tuple(o.data for o in outs)


def drd_forward(x, tree: DRDTree):
    """Run the full tree: reconstruction levels, then one decomposition per leaf.

    Output is the (T, 2^(depth-1) * K) stack of disentangled components.
    With stop_gradient set, every decomposition detaches its input, so
    parameters only learn from paths downstream of their nearest MCD pass.
    """
    xin, was_node = _as_node(x)
    seqs = [xin]
    for level_blocks in tree.levels:
        if len(level_blocks) != len(seqs):
            raise ValueError(
                f"level {level_blocks[0].level} has {len(level_blocks)} blocks "
                f"for {len(seqs)} inputs")
        next_seqs = []
        for block, seq in zip(level_blocks, seqs):
            a, b = dr_block_forward(seq, block, tree.stop_gradient)
            next_seqs.append(a)
            next_seqs.append(b)
        seqs = next_seqs
    mats = [_decompose(seq, tree, tree.stop_gradient) for seq in seqs]
    out = mats[0] if len(mats) == 1 else nk.concat_cols(mats)
    return out if was_node else out.data
