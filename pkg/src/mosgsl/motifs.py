"""Motif bank, subgraph-motif alignment loss, and class-wise k-means updates.

Motifs are plain (non-trainable) embedding vectors, R per class. During
training the alignment loss pulls candidate-subgraph embeddings toward the
worst-matching motif of their own class and away from other classes'
motifs; between epochs the bank is refreshed by Lloyd's k-means over the
embeddings buffered since the last update, warm-started at the current
motifs so each motif keeps its identity.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import ClassifierHead, GnnEncoder
from .errors import ConfigError
from .optim import Adam

BUFFER_CAP = 4096
NORM_EPS = 1e-24


@dataclass
class MotifBank:
    vectors: np.ndarray  # (L, d) with L = per_class * n_classes
    per_class: int
    n_classes: int

    def __post_init__(self):
        expected = self.per_class * self.n_classes
        if self.vectors.shape[0] != expected:
            raise ConfigError(
                f"bank needs {expected} motifs, got {self.vectors.shape[0]}")

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def class_of(self, j: int) -> int:
        return j // self.per_class

    def rows(self, c: int) -> slice:
        return slice(c * self.per_class, (c + 1) * self.per_class)

    def positives(self, c: int) -> np.ndarray:
        return np.arange(c * self.per_class, (c + 1) * self.per_class)

    def negatives(self, c: int) -> np.ndarray:
        mask = np.ones(self.size, dtype=bool)
        mask[self.positives(c)] = False
        return np.flatnonzero(mask)

    def unit_vectors(self) -> np.ndarray:
        # extraction can install a (near-)zero centroid when every buffered
        # embedding of a cluster is zero (dead-relu subgraphs early in
        # training); floor the norm so such motifs read as zero similarity
        norms = np.linalg.norm(self.vectors, axis=1, keepdims=True)
        return self.vectors / np.maximum(norms, 1e-12)

    def state(self) -> dict[str, np.ndarray]:
        return {"motifs.vectors": self.vectors.copy(),
                "motifs.meta": np.array([self.per_class, self.n_classes])}

    @classmethod
    def from_state(cls, state: dict[str, np.ndarray]) -> "MotifBank":
        per_class, n_classes = (int(x) for x in state["motifs.meta"])
        return cls(vectors=state["motifs.vectors"].copy(),
                   per_class=per_class, n_classes=n_classes)


class CandidateBuffer:
    """Per-class ring buffers of detached candidate embeddings."""

    def __init__(self, n_classes: int, cap: int = BUFFER_CAP):
        self._slots = [deque(maxlen=cap) for _ in range(n_classes)]

    def append(self, label: int, embedding: np.ndarray, graph_id: int = -1) -> None:
        self._slots[label].append((np.array(embedding, dtype=float), graph_id))

    def points(self, label: int) -> list[np.ndarray]:
        return [e for e, _ in self._slots[label]]

    def counts(self) -> list[int]:
        return [len(s) for s in self._slots]

    def clear(self) -> None:
        for s in self._slots:
            s.clear()


def motif_similarity(h, motif) -> Tensor:
    """Cosine similarity between an embedding and one motif vector."""
    h = ad.as_tensor(h)
    motif = np.asarray(motif, dtype=float)
    if h.shape != motif.shape:
        raise ad.ShapeError(f"dimension mismatch: {h.shape} vs {motif.shape}")
    m_norm = np.linalg.norm(motif)
    if m_norm == 0.0 or np.linalg.norm(h.data) == 0.0:
        raise ValueError("cosine similarity undefined for a zero vector")
    unit_h = ad.mul(h, ad.pow_const(ad.l2norm(h), -1.0))
    return ad.matmul(ad.as_tensor(motif / m_norm), unit_h)


def alignment_loss(embeddings, label: int, bank: MotifBank,
                   temperature: float, numerator: str = "min") -> Tensor:
    """Contrastive alignment of candidate embeddings against the bank.

    Per candidate: (worst same-class similarity)/t minus log-sum-exp of the
    other-class similarities over t. Larger is better; the training
    objective subtracts this term. Accepts a list of (d,) tensors or an
    already stacked (K, d) tensor.
    """
    if bank.n_classes < 2:
        raise ConfigError("motif alignment needs at least two classes")
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    if numerator not in ("min", "max"):
        raise ConfigError(f"numerator must be 'min' or 'max', got {numerator}")
    if isinstance(embeddings, list):
        if not embeddings:
            raise ValueError("alignment_loss needs at least one candidate embedding")
        embeddings = ad.stack_rows(embeddings)

    unit_bank = bank.unit_vectors()
    inv_t = 1.0 / temperature
    sq_norms = ad.sum_(ad.mul(embeddings, embeddings), axis=1, keepdims=True)
    unit_h = ad.mul(embeddings, ad.pow_const(ad.add(sq_norms, ad.as_tensor(NORM_EPS)),
                                             -0.5))
    pos = ad.matmul(unit_h, ad.as_tensor(unit_bank[bank.positives(label)].T))
    neg = ad.matmul(unit_h, ad.as_tensor(unit_bank[bank.negatives(label)].T))
    reduce_pos = ad.min_last if numerator == "min" else ad.max_last
    neg_lse = ad.log(ad.sum_(ad.exp(ad.mul(neg, ad.as_tensor(inv_t))), axis=1))
    terms = ad.sub(ad.mul(reduce_pos(pos), ad.as_tensor(inv_t)), neg_lse)
    return ad.mean(terms)


def total_loss(task_loss: Tensor, motif_loss: Tensor | None, coefficient: float) -> Tensor:
    """Objective to minimize: the alignment term enters with a minus sign."""
    if coefficient < 0:
        raise ConfigError(f"motif loss coefficient must be >= 0, got {coefficient}")
    if motif_loss is None or coefficient == 0.0:
        return task_loss
    return ad.sub(task_loss, ad.mul(motif_loss, ad.as_tensor(coefficient)))


# ---------------------------------------------------------------------------
# extraction


def lloyd_kmeans(points: np.ndarray, init: np.ndarray,
                 max_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm from explicit initial centroids.

    Runs to an assignment fixpoint or max_iter. Empty clusters are reseeded
    at the buffered point farthest from its assigned centroid (each point
    used at most once per iteration); with fewer points than clusters the
    surplus centroids keep their previous positions.
    """
    centroids = np.array(init, dtype=float)
    k = centroids.shape[0]
    prev = None
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        if prev is not None and np.array_equal(assign, prev):
            break
        prev = assign
        dist_own = d2[np.arange(points.shape[0]), assign]
        far_order = np.argsort(-dist_own, kind="stable")
        new_centroids = centroids.copy()
        used: set[int] = set()
        for j in range(k):
            members = np.flatnonzero(assign == j)
            if members.size:
                new_centroids[j] = points[members].mean(axis=0)
        for j in range(k):
            if np.flatnonzero(assign == j).size == 0:
                seed = next((int(i) for i in far_order if int(i) not in used), None)
                if seed is not None:
                    used.add(seed)
                    new_centroids[j] = points[seed]
        centroids = new_centroids
    return centroids, prev


def kmeans_inertia(points: np.ndarray, centroids: np.ndarray) -> float:
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return float(d2.min(axis=1).sum())


def extract_motifs(buffer: CandidateBuffer, bank: MotifBank) -> MotifBank:
    """Refresh each class's motifs by k-means over its buffered embeddings.

    Classes with an empty buffer keep their motifs. The class->motif map is
    never changed; the buffer is cleared afterwards.
    """
    for c in range(bank.n_classes):
        pts = buffer.points(c)
        if not pts:
            continue
        centroids, _ = lloyd_kmeans(np.stack(pts), bank.vectors[bank.rows(c)])
        bank.vectors[bank.rows(c)] = centroids
    buffer.clear()
    return bank


# ---------------------------------------------------------------------------
# initialization


def init_random_bank(n_classes: int, per_class: int, dim: int,
                     rng: np.random.Generator) -> MotifBank:
    """Unit-normalized Gaussian motifs."""
    v = rng.normal(size=(n_classes * per_class, dim))
    v /= np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-12)
    return MotifBank(vectors=v, per_class=per_class, n_classes=n_classes)


def _concat_pad(stacks: list[np.ndarray], square: bool) -> np.ndarray:
    """Concatenate view stacks, zero-padding to the largest window."""
    m = max(s.shape[1] for s in stacks)
    if all(s.shape[1] == m for s in stacks):
        return np.concatenate(stacks)
    padded = []
    for s in stacks:
        grow = m - s.shape[1]
        if grow:
            width = [(0, 0), (0, grow), (0, grow)] if square else \
                [(0, 0), (0, grow), (0, 0)]
            s = np.pad(s, width)
        padded.append(s)
    return np.concatenate(padded)


def _kmeans_random_restarts(points: np.ndarray, k: int, rng: np.random.Generator,
                            restarts: int = 5) -> np.ndarray:
    best, best_inertia = None, np.inf
    for _ in range(restarts):
        idx = rng.choice(points.shape[0], size=k, replace=points.shape[0] < k)
        centroids, _ = lloyd_kmeans(points, points[idx])
        inertia = kmeans_inertia(points, centroids)
        if inertia < best_inertia:
            best, best_inertia = centroids, inertia
    return best


def pretrain_bank(view_stacks: list, labels: np.ndarray, train_ids: np.ndarray,
                  in_dim: int, hidden: int, kind: str, n_classes: int, per_class: int,
                  rng: np.random.Generator, lr: float, weight_decay: float,
                  batch_size: int, epochs: int = 50) -> MotifBank:
    """Initialize motifs from a pretrained subgraph-sum classifier.

    view_stacks[i] = (feats (K, M, F), prop (K, M, M), sizes) holds graph
    i's zero-padded subgraph windows with the encoder-ready propagation
    matrices. A fresh encoder is trained to classify graphs from the sum
    of their subgraph embeddings; training-set subgraphs are then embedded
    with it and clustered per class (k-means, random-point init, best of 5
    restarts by inertia).
    """
    if train_ids.size == 0:
        raise ConfigError("pretrained motif initialization needs training graphs")
    enc = GnnEncoder(kind, in_dim, hidden, "pretrain.enc", rng)
    head = ClassifierHead(hidden, n_classes, "pretrain.head", rng)
    opt = Adam(enc.params() + head.params(), lr=lr, weight_decay=weight_decay)

    def batch_pooled(gids, train: bool) -> tuple[Tensor, list[int]]:
        feats = _concat_pad([view_stacks[int(g)][0] for g in gids], square=False)
        prop = _concat_pad([view_stacks[int(g)][1] for g in gids], square=True)
        sizes = [s for g in gids for s in view_stacks[int(g)][2]]
        counts = [len(view_stacks[int(g)][2]) for g in gids]
        return enc.encode_stacked(feats, sizes, train, rng, prop_const=prop), counts

    def batch_logits(gids, train: bool) -> Tensor:
        pooled, counts = batch_pooled(gids, train)
        rows, ofs = [], 0
        for k in counts:
            rows.append(head(ad.sum_(ad.take_rows(pooled, np.arange(ofs, ofs + k)),
                                     axis=0)))
            ofs += k
        return ad.stack_rows(rows)

    ids = np.array(train_ids)
    for _ in range(epochs):
        order = rng.permutation(ids)
        for start in range(0, order.size, batch_size):
            batch = order[start:start + batch_size]
            loss = ad.cross_entropy_with_logits(batch_logits(batch, True), labels[batch])
            opt.zero_grad()
            ad.backward(loss)
            opt.step()

    by_class: list[list[np.ndarray]] = [[] for _ in range(n_classes)]
    with ad.no_grad():
        for start in range(0, ids.size, batch_size):
            batch = ids[start:start + batch_size]
            pooled, counts = batch_pooled(batch, False)
            ofs = 0
            for g, k in zip(batch, counts):
                for emb in pooled.data[ofs:ofs + k]:
                    by_class[int(labels[g])].append(emb.copy())
                ofs += k

    vectors = np.zeros((n_classes * per_class, hidden))
    for c in range(n_classes):
        if not by_class[c]:
            raise ConfigError(f"no training subgraphs for class {c}")
        vectors[c * per_class:(c + 1) * per_class] = _kmeans_random_restarts(
            np.stack(by_class[c]), per_class, rng)
    return MotifBank(vectors=vectors, per_class=per_class, n_classes=n_classes)
