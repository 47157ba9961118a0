"""Degree-ranked BFS partitioning of a graph into overlapping subgraphs.

Centers are the top-K nodes by degree (ties broken by ascending id); each
subgraph is the first M nodes discovered by BFS from its center, with
neighbors expanded in ascending node id order.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .data import Graph


@dataclass
class SubgraphView:
    """A local window into a parent graph; nodes[0] is the BFS center."""

    parent_id: int
    center: int
    nodes: list[int]  # parent node ids in BFS discovery order, len <= M
    local_adj: np.ndarray  # induced (m, m) weighted adjacency
    local_feats: np.ndarray  # (m, F) rows of the parent feature matrix

    @property
    def size(self) -> int:
        return len(self.nodes)


def bfs_partition(graph: Graph, k: int, m: int, parent_id: int = -1) -> list[SubgraphView]:
    """Extract min(k, n) BFS subgraphs of at most m nodes each."""
    if graph.n == 0:
        raise ValueError("cannot partition an empty graph")
    if k < 1 or m < 1:
        raise ValueError(f"k and m must be positive, got k={k}, m={m}")

    deg = graph.degrees()
    ranked = sorted(range(graph.n), key=lambda u: (-deg[u], u))
    centers = ranked[:min(k, graph.n)]
    nbrs = graph.adjacency_lists()

    views = []
    for center in centers:
        nodes = [center]
        seen = {center}
        queue = deque([center])
        while queue and len(nodes) < m:
            u = queue.popleft()
            for v, _ in nbrs[u]:  # ascending id by construction
                if v not in seen:
                    seen.add(v)
                    nodes.append(v)
                    queue.append(v)
                    if len(nodes) == m:
                        break
        pos = {u: i for i, u in enumerate(nodes)}
        local = np.zeros((len(nodes), len(nodes)))
        for i, u in enumerate(nodes):
            for v, w in nbrs[u]:
                j = pos.get(v)
                if j is not None:
                    local[i, j] = w
        feats = graph.features[nodes] if graph.features is not None else None
        views.append(SubgraphView(parent_id=parent_id, center=center, nodes=nodes,
                                  local_adj=local, local_feats=feats))
    return views
