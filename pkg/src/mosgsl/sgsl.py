"""Subgraph-level structure learning: importance scores, gated fusion of
refined substructures into the parent graph, and top-fraction candidate
selection.

Fusion weights are a softmax over a graph's subgraph scores (keeps the
fused matrix bounded); candidate ranking uses the raw scores, which orders
identically since softmax is strictly increasing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .backbone import GnnEncoder, pool_mean
from .errors import ConfigError
from .partition import SubgraphView


class ImportanceScorer:
    """Projects pooled subgraph embeddings onto a learnable direction."""

    def __init__(self, hidden: int, name: str, rng: np.random.Generator):
        v = rng.normal(size=hidden)
        v /= np.linalg.norm(v)  # init away from zero
        self.p = Parameter(v, f"{name}.p")

    def __call__(self, pooled_rows: Tensor) -> Tensor:
        unit = ad.mul(self.p, ad.pow_const(ad.l2norm(self.p), -1.0))
        return ad.matmul(pooled_rows, unit)

    def params(self):
        return [self.p]


def score_subgraphs(views: list[SubgraphView], encoder: GnnEncoder,
                    scorer: ImportanceScorer, train: bool,
                    rng: np.random.Generator) -> Tensor:
    """Importance score per view, from pooled encodings of the ORIGINAL
    local adjacency."""
    if not views:
        raise ValueError("score_subgraphs needs at least one view")
    pooled = [pool_mean(encoder(v.local_adj, v.local_feats, train, rng)) for v in views]
    return scorer(ad.stack_rows(pooled))


@dataclass
class FusedStructure:
    matrix: Tensor  # (n, n), symmetric, zero diagonal, entries in [0, 1]
    view_nodes: list[list[int]]

    def provenance(self) -> dict[tuple[int, int], list[int]]:
        """Edge -> indices of the subgraphs whose window covers it."""
        out: dict[tuple[int, int], list[int]] = {}
        for k, nodes in enumerate(self.view_nodes):
            for i, u in enumerate(nodes):
                for v in nodes[i + 1:]:
                    key = (min(u, v), max(u, v))
                    out.setdefault(key, []).append(k)
        return out


def fuse(adjacency: np.ndarray, views: list[SubgraphView], refined: list[Tensor],
         alpha: Tensor, gamma: float) -> FusedStructure:
    """Blend softmax-weighted refined substructures with the original graph."""
    if not 0.0 <= gamma <= 1.0:
        raise ConfigError(f"gamma must lie in [0, 1], got {gamma}")
    if len(views) != len(refined):
        raise ValueError("one refined matrix per view required")
    n = adjacency.shape[0]
    base = ad.mul(ad.as_tensor(adjacency), ad.as_tensor(1.0 - gamma))
    weights = ad.softmax_last(alpha)
    acc = None
    for k, (view, local) in enumerate(zip(views, refined)):
        term = ad.mul(ad.embed_submatrix(local, view.nodes, n), ad.pick(weights, k))
        acc = term if acc is None else ad.add(acc, term)
    fused = ad.clamp(ad.add(ad.mul(acc, ad.as_tensor(gamma)), base), 0.0, 1.0)
    return FusedStructure(matrix=fused, view_nodes=[list(v.nodes) for v in views])


@dataclass
class Candidate:
    view: SubgraphView
    refined: Tensor
    score: float


@dataclass
class CandidateSet:
    items: list[Candidate]
    indices: list[int]

    def __len__(self):
        return len(self.items)


def candidate_count(eps: float, k: int) -> int:
    # tiny slack keeps ceil() immune to float noise in eps * k
    return max(1, math.ceil(eps * k - 1e-9))


def select_candidates(views: list[SubgraphView], refined: list[Tensor],
                      alpha: Tensor, eps: float) -> CandidateSet:
    """Keep the ceil(eps * K) highest-scoring views; ties favor lower index."""
    if not 0.0 < eps <= 1.0:
        raise ConfigError(f"candidate fraction must lie in (0, 1], got {eps}")
    scores = alpha.data
    order = np.argsort(-scores, kind="stable")
    chosen = sorted(int(i) for i in order[:candidate_count(eps, len(views))])
    items = [Candidate(view=views[i], refined=refined[i], score=float(scores[i]))
             for i in chosen]
    return CandidateSet(items=items, indices=chosen)
