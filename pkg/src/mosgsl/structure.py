"""Pairwise edge scoring and sparsification for one (sub)graph.

The learner embeds nodes with a small MLP and scores every pair with a
scaled inner product through a sigmoid; the processor keeps either the
top-k entries per row (straight-through mask) or entries above a
threshold, and the result is symmetrized with a zero diagonal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError
from .layers import MLP
from .partition import SubgraphView

PROCESSOR_MODES = ("knn", "eps")


class GraphLearner:
    def __init__(self, in_dim: int, hidden: int, name: str, rng: np.random.Generator):
        self.mlp = MLP(in_dim, hidden, hidden, name, rng)
        self.scale = 1.0 / math.sqrt(hidden)

    def pair_scores(self, feats) -> Tensor:
        """Sigmoid similarity matrix of the embedded nodes."""
        e = self.mlp(ad.as_tensor(feats))
        return ad.sigmoid(ad.mul(ad.matmul(e, ad.transpose(e)), ad.as_tensor(self.scale)))

    def params(self):
        return self.mlp.params()


@dataclass
class Processor:
    mode: str = "knn"
    k: int = 8
    theta: float = 0.3

    def __post_init__(self):
        if self.mode not in PROCESSOR_MODES:
            raise ConfigError(f"unknown processor mode: {self.mode}")
        if self.mode == "knn" and self.k < 1:
            raise ConfigError(f"knn processor needs k >= 1, got {self.k}")

    def mask(self, scores: np.ndarray) -> np.ndarray:
        """Binary keep-mask on forward values; the diagonal is never kept."""
        m = scores.shape[0]
        keep = np.zeros_like(scores)
        if self.mode == "knn":
            k = min(self.k, m - 1)
            offdiag = scores.copy()
            np.fill_diagonal(offdiag, -np.inf)
            for i in range(m):
                top = np.argsort(-offdiag[i], kind="stable")[:k]
                keep[i, top] = 1.0
        else:
            keep = (scores >= self.theta).astype(float)
            np.fill_diagonal(keep, 0.0)
        return keep

    def mask_stacked(self, scores: np.ndarray, sizes) -> np.ndarray:
        """Per-view masks for a zero-padded score stack (B, M, M).

        Matches mask() applied per valid window; padded rows/cols stay zero.
        """
        cap = scores.shape[1]
        sizes_arr = np.asarray(sizes)
        keep = np.zeros_like(scores)
        if self.mode == "eps":
            ar = np.arange(cap)
            row_ok = ar[None, :] < sizes_arr[:, None]
            valid = row_ok[:, :, None] & row_ok[:, None, :]
            keep = ((scores >= self.theta) & valid).astype(float)
            keep[:, ar, ar] = 0.0
            return keep
        for m in np.unique(sizes_arr):
            if m <= 1:
                continue
            sel = np.flatnonzero(sizes_arr == m)
            sub = scores[sel][:, :m, :m].copy()
            diag = np.arange(m)
            sub[:, diag, diag] = -np.inf
            k = min(self.k, m - 1)
            top = np.argsort(-sub, axis=2, kind="stable")[:, :, :k]
            block = np.zeros((sel.shape[0], m, m))
            block[np.arange(sel.shape[0])[:, None, None], diag[None, :, None], top] = 1.0
            keep[sel[:, None, None],
                 diag[None, :, None],
                 diag[None, None, :]] = block
        return keep


def refine_adjacency(feats, learner: GraphLearner, proc: Processor) -> Tensor:
    """Refined adjacency for the nodes described by a feature matrix."""
    m = np.asarray(feats if not isinstance(feats, Tensor) else feats.data).shape[0]
    if m == 0:
        raise ValueError("cannot learn structure for an empty node set")
    if m == 1:
        return Tensor(np.zeros((1, 1)))
    s = learner.pair_scores(feats)
    masked = ad.mul(s, ad.as_tensor(proc.mask(s.data)))
    return ad.mul(ad.add(masked, ad.transpose(masked)), ad.as_tensor(0.5))


def learn_structure(view: SubgraphView, learner: GraphLearner, proc: Processor) -> Tensor:
    return refine_adjacency(view.local_feats, learner, proc)


def refine_views_stacked(feats_stack, sizes, learner: GraphLearner,
                         proc: Processor) -> Tensor:
    """Refined adjacencies for a zero-padded stack of views, as (B, M, M).

    Equivalent to refine_adjacency per view; padded rows and columns stay
    zero. One batched pass instead of B small ones.
    """
    e = learner.mlp(ad.as_tensor(feats_stack))
    raw = ad.mul(ad.matmul(e, ad.transpose_last2(e)), ad.as_tensor(learner.scale))
    s = ad.sigmoid(raw)
    masked = ad.mul(s, ad.as_tensor(proc.mask_stacked(s.data, sizes)))
    return ad.mul(ad.add(masked, ad.transpose_last2(masked)), ad.as_tensor(0.5))
