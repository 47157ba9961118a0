"""TU-format dataset handling: parsing, feature synthesis, CV splits.

A dataset directory holds <name>_A.txt (edges, 1-based global node ids),
<name>_graph_indicator.txt (node -> graph id), <name>_graph_labels.txt and
optionally <name>_node_labels.txt. Separators may be commas or whitespace.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataFormatError

N_FOLDS = 10
VAL_FRACTION = 0.1
DEFAULT_DEGREE_CAP = 64


@dataclass
class Graph:
    """One undirected weighted graph with node features and a class label."""

    n: int
    edges: list[tuple[int, int, float]]  # (u, v, w) with u < v, unique, w in [0, 1]
    features: np.ndarray | None
    label: int
    node_labels: np.ndarray | None = None  # raw TU node labels, kept for round-trips

    def dense_adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n, self.n))
        for u, v, w in self.edges:
            adj[u, v] = w
            adj[v, u] = w
        return adj

    def adjacency_lists(self) -> list[list[tuple[int, float]]]:
        nbrs: list[list[tuple[int, float]]] = [[] for _ in range(self.n)]
        for u, v, w in self.edges:
            nbrs[u].append((v, w))
            nbrs[v].append((u, w))
        for lst in nbrs:
            lst.sort()
        return nbrs

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        for u, v, _ in self.edges:
            deg[u] += 1
            deg[v] += 1
        return deg


@dataclass
class Dataset:
    name: str
    graphs: list[Graph]
    num_classes: int
    feature_dim: int  # 0 until features are attached

    def __len__(self) -> int:
        return len(self.graphs)

    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs], dtype=np.int64)


@dataclass
class Fold:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


@dataclass
class FoldPlan:
    folds: list[Fold] = field(default_factory=list)


def _read_rows(path: str) -> list[list[str]]:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"required dataset file missing: {path}")
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rows.append(line.replace(",", " ").split())
    return rows


def parse_tu_dataset(directory: str, name: str) -> Dataset:
    """Parse a TU-format dataset into graphs with 0-based local node ids.

    Graph labels are remapped to a contiguous [0, C) range. Duplicate edges
    and self-loops in the source files are dropped with a warning. Node-label
    files, when present, become one-hot features.
    """
    prefix = os.path.join(directory, name, name) if os.path.isdir(
        os.path.join(directory, name)) else os.path.join(directory, name)

    indicator_rows = _read_rows(f"{prefix}_graph_indicator.txt")
    graph_of_node = np.array([int(r[0]) for r in indicator_rows], dtype=np.int64)
    n_graphs = int(graph_of_node.max())
    n_nodes = graph_of_node.shape[0]

    # global 1-based node id -> (graph index, local id)
    local_id = np.zeros(n_nodes, dtype=np.int64)
    counts = np.zeros(n_graphs, dtype=np.int64)
    for i, g in enumerate(graph_of_node):
        local_id[i] = counts[g - 1]
        counts[g - 1] += 1

    label_rows = _read_rows(f"{prefix}_graph_labels.txt")
    if len(label_rows) != n_graphs:
        raise DataFormatError(
            f"{name}: {len(label_rows)} graph labels for {n_graphs} graphs")
    raw_labels = [int(r[0]) for r in label_rows]
    classes = sorted(set(raw_labels))
    remap = {c: i for i, c in enumerate(classes)}
    labels = [remap[c] for c in raw_labels]

    edge_sets: list[set[tuple[int, int]]] = [set() for _ in range(n_graphs)]
    dropped_self = dropped_dup = 0
    for lineno, row in enumerate(_read_rows(f"{prefix}_A.txt"), start=1):
        u, v = int(row[0]), int(row[1])
        if not (1 <= u <= n_nodes and 1 <= v <= n_nodes):
            raise DataFormatError(f"{name}_A.txt line {lineno}: node id out of range")
        gu, gv = graph_of_node[u - 1], graph_of_node[v - 1]
        if gu != gv:
            raise DataFormatError(
                f"{name}_A.txt line {lineno}: edge ({u}, {v}) crosses graph boundary")
        if u == v:
            dropped_self += 1
            continue
        a, b = int(local_id[u - 1]), int(local_id[v - 1])
        if a > b:
            a, b = b, a
        if (a, b) in edge_sets[gu - 1]:
            dropped_dup += 1
            continue
        edge_sets[gu - 1].add((a, b))
    if dropped_self:
        warnings.warn(f"{name}: dropped {dropped_self} self-loop(s)")
    # each undirected edge normally appears twice in TU files
    if dropped_dup > sum(len(s) for s in edge_sets):
        warnings.warn(f"{name}: dropped {dropped_dup - sum(len(s) for s in edge_sets)} "
                      "extra duplicate edge(s)")

    node_label_path = f"{prefix}_node_labels.txt"
    node_labels = None
    if os.path.isfile(node_label_path):
        rows = _read_rows(node_label_path)
        if len(rows) != n_nodes:
            raise DataFormatError(f"{name}: {len(rows)} node labels for {n_nodes} nodes")
        node_labels = np.array([int(r[0]) for r in rows], dtype=np.int64)

    graphs = []
    for gi in range(n_graphs):
        n = int(counts[gi])
        edges = [(u, v, 1.0) for u, v in sorted(edge_sets[gi])]
        graphs.append(Graph(n=n, edges=edges, features=None, label=labels[gi]))

    feature_dim = 0
    if node_labels is not None:
        values = sorted(set(node_labels.tolist()))
        vmap = {v: i for i, v in enumerate(values)}
        feature_dim = len(values)
        per_graph: list[list[int]] = [[] for _ in range(n_graphs)]
        for i, g in enumerate(graph_of_node):
            per_graph[g - 1].append(vmap[int(node_labels[i])])
        for gi, graph in enumerate(graphs):
            onehot = np.zeros((graph.n, feature_dim))
            onehot[np.arange(graph.n), per_graph[gi]] = 1.0
            graph.features = onehot
            graph.node_labels = np.array(per_graph[gi], dtype=np.int64)

    return Dataset(name=name, graphs=graphs, num_classes=len(classes),
                   feature_dim=feature_dim)


def synthesize_features(dataset: Dataset, cap: int = DEFAULT_DEGREE_CAP) -> Dataset:
    """Attach degree one-hot features (bucketed at cap) where none exist."""
    if dataset.feature_dim:
        return dataset
    dim = cap + 1
    for graph in dataset.graphs:
        deg = np.minimum(graph.degrees(), cap)
        onehot = np.zeros((graph.n, dim))
        onehot[np.arange(graph.n), deg] = 1.0
        graph.features = onehot
    dataset.feature_dim = dim
    return dataset


def load_dataset(directory: str, name: str, degree_cap: int = DEFAULT_DEGREE_CAP) -> Dataset:
    return synthesize_features(parse_tu_dataset(directory, name), degree_cap)


def write_tu_dataset(dataset: Dataset, directory: str) -> None:
    """Serialize back to TU files (inverse of parse_tu_dataset)."""
    name = dataset.name
    out = os.path.join(directory, name)
    os.makedirs(out, exist_ok=True)
    prefix = os.path.join(out, name)
    offsets = np.cumsum([0] + [g.n for g in dataset.graphs])
    with open(f"{prefix}_graph_indicator.txt", "w") as fh:
        for gi, graph in enumerate(dataset.graphs):
            for _ in range(graph.n):
                fh.write(f"{gi + 1}\n")
    with open(f"{prefix}_graph_labels.txt", "w") as fh:
        for graph in dataset.graphs:
            fh.write(f"{graph.label}\n")
    with open(f"{prefix}_A.txt", "w") as fh:
        for gi, graph in enumerate(dataset.graphs):
            base = offsets[gi]
            for u, v, _ in graph.edges:
                fh.write(f"{base + u + 1}, {base + v + 1}\n")
                fh.write(f"{base + v + 1}, {base + u + 1}\n")
    if all(g.node_labels is not None for g in dataset.graphs):
        with open(f"{prefix}_node_labels.txt", "w") as fh:
            for graph in dataset.graphs:
                for lab in graph.node_labels:
                    fh.write(f"{lab}\n")


def make_fold_plan(dataset: Dataset, seed: int) -> FoldPlan:
    """Stratified 10-fold test partition with a stratified 10% validation
    split carved out of each fold's training graphs. Deterministic in seed."""
    labels = dataset.labels()
    classes, counts = np.unique(labels, return_counts=True)
    for c, cnt in zip(classes, counts):
        if cnt < N_FOLDS:
            raise ConfigError(
                f"class {c} has {cnt} graphs; at least {N_FOLDS} per class required")

    rng = np.random.default_rng(seed)
    buckets: list[list[int]] = [[] for _ in range(N_FOLDS)]
    for c in classes:
        ids = np.flatnonzero(labels == c)
        rng.shuffle(ids)
        for i, gid in enumerate(ids):
            buckets[i % N_FOLDS].append(int(gid))

    folds = []
    for f in range(N_FOLDS):
        test = np.array(sorted(buckets[f]), dtype=np.int64)
        rest = np.array(sorted(set(range(len(dataset))) - set(buckets[f])), dtype=np.int64)
        val_rng = np.random.default_rng([seed, f])
        val_ids: list[int] = []
        for c in classes:
            pool = rest[labels[rest] == c]
            take = max(1, int(round(VAL_FRACTION * pool.shape[0])))
            picked = val_rng.permutation(pool)[:take]
            val_ids.extend(int(i) for i in picked)
        val = np.array(sorted(val_ids), dtype=np.int64)
        train = np.array(sorted(set(rest.tolist()) - set(val_ids)), dtype=np.int64)
        folds.append(Fold(train=train, val=val, test=test))
    return FoldPlan(folds=folds)


# ---------------------------------------------------------------------------
# refined-structure files: one "u v w" edge list per graph plus a manifest


MANIFEST_NAME = "manifest.txt"


def structure_filename(graph_id: int) -> str:
    return f"graph_{graph_id:06d}.txt"


def write_structures(directory: str, structures: dict[int, list[tuple[int, int, float]]]) -> None:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, MANIFEST_NAME), "w") as mf:
        for gid in sorted(structures):
            fname = structure_filename(gid)
            mf.write(f"{gid} {fname}\n")
            with open(os.path.join(directory, fname), "w") as fh:
                for u, v, w in structures[gid]:
                    fh.write(f"{u} {v} {w:.10g}\n")


def read_structures(directory: str) -> dict[int, list[tuple[int, int, float]]]:
    manifest = os.path.join(directory, MANIFEST_NAME)
    if not os.path.isfile(manifest):
        raise FileNotFoundError(f"structure manifest missing: {manifest}")
    structures: dict[int, list[tuple[int, int, float]]] = {}
    for row in _read_rows(manifest):
        gid, fname = int(row[0]), row[1]
        edges = []
        for lineno, erow in enumerate(_read_rows(os.path.join(directory, fname)), start=1):
            if len(erow) != 3:
                raise DataFormatError(f"{fname} line {lineno}: expected 'u v w'")
            edges.append((int(erow[0]), int(erow[1]), float(erow[2])))
        structures[gid] = edges
    return structures


def dataset_with_structures(dataset: Dataset,
                            structures: dict[int, list[tuple[int, int, float]]]) -> Dataset:
    """Clone a dataset, replacing each graph's edges with refined ones."""
    graphs = []
    for gid, graph in enumerate(dataset.graphs):
        edges = structures.get(gid)
        if edges is None:
            raise DataFormatError(f"no refined structure for graph {gid}")
        for u, v, w in edges:
            if not (0 <= u < graph.n and 0 <= v < graph.n):
                raise DataFormatError(f"graph {gid}: refined edge ({u}, {v}) out of range")
            if not 0.0 <= w <= 1.0:
                raise DataFormatError(
                    f"graph {gid}: refined weight {w} outside [0, 1] on edge ({u}, {v})")
        graphs.append(Graph(n=graph.n, edges=list(edges), features=graph.features,
                            label=graph.label, node_labels=graph.node_labels))
    return Dataset(name=dataset.name, graphs=graphs, num_classes=dataset.num_classes,
                   feature_dim=dataset.feature_dim)
