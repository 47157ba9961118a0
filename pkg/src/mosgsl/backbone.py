"""GNN encoders (GCN, SAGE, GIN), mean-pool readout, and the classifier head.

All encoders are two message-passing blocks (BatchNorm + ReLU, dropout in
between) and consume weighted adjacencies: GCN normalizes with weighted
degrees, SAGE takes the weight-normalized neighbor mean, GIN a weighted sum.
Self-loops are added only inside the GCN normalization, never to the data.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .layers import BatchNorm1d, Linear, MLP

ENCODER_KINDS = ("gcn", "sage", "gin")


def gcn_normalize(adj: Tensor) -> Tensor:
    """Symmetric normalization of A + I with weighted degrees."""
    n = adj.shape[0]
    a1 = ad.add(adj, ad.as_tensor(np.eye(n)))
    deg = ad.sum_(a1, axis=1, keepdims=True)
    r = ad.pow_const(deg, -0.5)
    return ad.mul(ad.mul(a1, r), ad.transpose(r))


def gcn_normalize_stacked(adj: Tensor) -> Tensor:
    """gcn_normalize applied to every matrix of a (B, M, M) stack."""
    m = adj.shape[-1]
    a1 = ad.add(adj, ad.as_tensor(np.eye(m)))
    deg = ad.sum_(a1, axis=2, keepdims=True)
    r = ad.pow_const(deg, -0.5)
    return ad.mul(ad.mul(a1, r), ad.transpose_last2(r))


class _GcnLayer:
    def __init__(self, in_dim, out_dim, name, rng):
        self.lin = Linear(in_dim, out_dim, name, rng)

    def __call__(self, norm_adj, h):
        return self.lin(ad.matmul(norm_adj, h))

    def params(self):
        return self.lin.params()


class _SageLayer:
    def __init__(self, in_dim, out_dim, name, rng):
        self.lin_self = Linear(in_dim, out_dim, f"{name}.self", rng)
        self.lin_neigh = Linear(in_dim, out_dim, f"{name}.neigh", rng, bias=False)

    def __call__(self, adj, h):
        denom = ad.sum_(adj, axis=adj.ndim - 1, keepdims=True)
        # isolated rows get denominator 1 so their (zero) mean stays zero
        safe = ad.add(denom, ad.as_tensor((denom.data == 0).astype(float)))
        neigh = ad.mul(ad.matmul(adj, h), ad.pow_const(safe, -1.0))
        return ad.add(self.lin_self(h), self.lin_neigh(neigh))

    def params(self):
        return self.lin_self.params() + self.lin_neigh.params()


class _GinLayer:
    def __init__(self, in_dim, out_dim, name, rng):
        self.eps = Parameter(np.zeros(()), f"{name}.eps")
        self.mlp = MLP(in_dim, out_dim, out_dim, f"{name}.mlp", rng)

    def __call__(self, adj, h):
        mixed = ad.add(ad.mul(ad.add(self.eps, ad.as_tensor(1.0)), h), ad.matmul(adj, h))
        return self.mlp(mixed)

    def params(self):
        return [self.eps] + self.mlp.params()


_LAYERS = {"gcn": _GcnLayer, "sage": _SageLayer, "gin": _GinLayer}


class GnnEncoder:
    """Two-block message-passing encoder mapping (adj, feats) to (n, d).

    encode_many processes several graphs as one batch: message passing runs
    per graph, while BatchNorm/ReLU/dropout act on the concatenated node
    rows, so normalization statistics are minibatch-level (as in standard
    batched-graph training) rather than per tiny graph.
    """

    def __init__(self, kind: str, in_dim: int, hidden: int, name: str,
                 rng: np.random.Generator, dropout: float = 0.5):
        if kind not in ENCODER_KINDS:
            raise ValueError(f"unknown encoder kind: {kind}")
        self.kind = kind
        self.hidden = hidden
        self.dropout = dropout
        layer = _LAYERS[kind]
        self.conv1 = layer(in_dim, hidden, f"{name}.conv1", rng)
        self.conv2 = layer(hidden, hidden, f"{name}.conv2", rng)
        self.bn1 = BatchNorm1d(hidden, f"{name}.bn1")
        self.bn2 = BatchNorm1d(hidden, f"{name}.bn2")

    def encode_many(self, pairs: list[tuple], train: bool,
                    rng: np.random.Generator) -> list[Tensor]:
        if not pairs:
            return []
        props, feats, sizes = [], [], []
        for adj, fts in pairs:
            adj = ad.as_tensor(adj)
            fts = ad.as_tensor(fts)
            if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
                raise ad.ShapeError(f"adjacency must be square, got {adj.shape}")
            if not np.allclose(adj.data, adj.data.T, atol=1e-9):
                raise ValueError("adjacency must be symmetric")
            props.append(gcn_normalize(adj) if self.kind == "gcn" else adj)
            feats.append(fts)
            sizes.append(fts.shape[0])

        def block(conv, bn, rows):
            cat = ad.concat_rows([conv(p, h) for p, h in zip(props, rows)]) \
                if len(rows) > 1 else conv(props[0], rows[0])
            return ad.relu(bn(cat, train))

        h = block(self.conv1, self.bn1, feats)
        h = ad.dropout(h, self.dropout, train, rng)
        h = block(self.conv2, self.bn2, self._split(h, sizes))
        return self._split(h, sizes)

    @staticmethod
    def _split(cat: Tensor, sizes: list[int]) -> list[Tensor]:
        if len(sizes) == 1:
            return [cat]
        parts, ofs = [], 0
        for n in sizes:
            parts.append(ad.take_rows(cat, np.arange(ofs, ofs + n)))
            ofs += n
        return parts

    def encode_stacked(self, feats_stack, sizes, train: bool,
                       rng: np.random.Generator, adj: Tensor | None = None,
                       prop_const: np.ndarray | None = None) -> Tensor:
        """Mean-pooled embeddings (B, d) for a zero-padded (B, M, *) stack.

        Exactly one of adj (differentiable adjacency stack) or prop_const
        (precomputed constant propagation stack) must be given. Padded rows
        are excluded from normalization statistics and from pooling.
        """
        if (adj is None) == (prop_const is None):
            raise ValueError("pass exactly one of adj or prop_const")
        if adj is not None:
            prop = gcn_normalize_stacked(ad.as_tensor(adj)) if self.kind == "gcn" \
                else ad.as_tensor(adj)
        else:
            prop = ad.as_tensor(prop_const)
        feats_stack = ad.as_tensor(feats_stack)
        n_views, m = feats_stack.shape[0], feats_stack.shape[1]
        valid = np.concatenate([np.arange(b * m, b * m + s)
                                for b, s in enumerate(sizes)])

        def block(conv, bn, rows, with_dropout):
            h = ad.take_rows(ad.reshape(conv(prop, rows), (n_views * m, self.hidden)),
                             valid, unique=True)
            h = ad.relu(bn(h, train))
            if with_dropout:
                h = ad.dropout(h, self.dropout, train, rng)
            return ad.reshape(ad.row_scatter_add(h, valid, n_views * m, unique=True),
                              (n_views, m, self.hidden))

        h = block(self.conv1, self.bn1, feats_stack, with_dropout=True)
        h = block(self.conv2, self.bn2, h, with_dropout=False)
        row_mask = np.zeros((n_views, m, 1))
        for b, s in enumerate(sizes):
            row_mask[b, :s] = 1.0
        total = ad.sum_(ad.mul(h, ad.as_tensor(row_mask)), axis=1)
        inv = (1.0 / np.asarray(sizes, dtype=float)).reshape(-1, 1)
        return ad.mul(total, ad.as_tensor(inv))

    def __call__(self, adj, feats, train: bool, rng: np.random.Generator) -> Tensor:
        return self.encode_many([(adj, feats)], train, rng)[0]

    def params(self):
        return self.conv1.params() + self.conv2.params() + self.bn1.params() + self.bn2.params()

    def buffers(self):
        return {**self.bn1.buffers(), **self.bn2.buffers()}

    def load_buffers(self, state):
        self.bn1.load_buffers(state)
        self.bn2.load_buffers(state)


def pool_mean(node_embeddings: Tensor) -> Tensor:
    """Global average pooling over nodes."""
    if node_embeddings.data.shape[0] == 0:
        raise ad.ShapeError("cannot pool an empty embedding matrix")
    return ad.mean(node_embeddings, axis=0)


class ClassifierHead:
    """Affine map from a pooled graph embedding to class logits."""

    def __init__(self, hidden: int, n_classes: int, name: str, rng: np.random.Generator):
        self.lin = Linear(hidden, n_classes, name, rng)

    def __call__(self, graph_embedding: Tensor) -> Tensor:
        return self.lin(graph_embedding)

    def params(self):
        return self.lin.params()


def save_checkpoint(path: str, state: dict[str, np.ndarray]) -> None:
    np.savez(path, **state)


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    with np.load(path) as npz:
        return {k: npz[k].copy() for k in npz.files}
