"""Cross-validated training: co-learning, preprocessing and test-time
regimes, ablation variants, early stopping, and deterministic fold seeds.

One fold's work is fully determined by (config, dataset, fold index): the
fold rng is seeded with base seed + fold index, so folds can run serially
or in a process pool with bit-identical results.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import ENCODER_KINDS, ClassifierHead, GnnEncoder, pool_mean
from .data import Dataset, Fold, make_fold_plan
from .errors import ConfigError, DivergenceError
from .layers import collect_state, load_state
from .motifs import (
    CandidateBuffer,
    MotifBank,
    alignment_loss,
    extract_motifs,
    init_random_bank,
    pretrain_bank,
    total_loss,
)
from .optim import Adam
from .partition import SubgraphView, bfs_partition
from .sgsl import ImportanceScorer, candidate_count, fuse
from .structure import GraphLearner, Processor, refine_adjacency, refine_views_stacked

REGIMES = ("co", "pre", "test")
VARIANTS = ("full", "gsl", "sgsl", "gsl+motif", "fixed-motif")
MOTIF_INITS = ("random", "pretrain")


@dataclass
class RunConfig:
    dataset: str = "IMDB-BINARY"
    data_dir: str | None = None
    degree_cap: int = 64
    backbone: str = "gcn"
    hidden: int = 64
    dropout: float = 0.5
    # subgraph structure learning
    k_subgraphs: int = 8
    max_subgraph_nodes: int = 16
    candidate_fraction: float = 0.6
    gamma: float = 0.5
    processor: str = "knn"
    knn_k: int = 8
    eps_theta: float = 0.3
    # motif guidance
    motifs_per_class: int = 2
    motif_coefficient: float = 0.1
    temperature: float = 0.5
    update_every: int | None = 20
    motif_init: str = "pretrain"
    numerator: str = "min"
    pretrain_epochs: int = 50
    # optimization protocol
    lr: float = 1e-3
    weight_decay: float = 5e-4
    batch_size: int = 64
    max_epochs: int = 400
    patience: int = 50
    seed: int = 0
    regime: str = "co"
    variant: str = "full"
    jobs: int = 1

    def validate(self) -> None:
        checks = [
            (self.backbone in ENCODER_KINDS, f"unknown backbone: {self.backbone}"),
            (self.regime in REGIMES, f"unknown regime: {self.regime}"),
            (self.variant in VARIANTS, f"unknown variant: {self.variant}"),
            (self.motif_init in MOTIF_INITS, f"unknown motif init: {self.motif_init}"),
            (self.numerator in ("min", "max"), f"numerator must be min or max"),
            (self.hidden >= 1, "hidden dim must be positive"),
            (self.k_subgraphs >= 1, "k_subgraphs must be >= 1"),
            (self.max_subgraph_nodes >= 1, "max_subgraph_nodes must be >= 1"),
            (0.0 < self.candidate_fraction <= 1.0,
             f"candidate_fraction must lie in (0, 1], got {self.candidate_fraction}"),
            (0.0 <= self.gamma <= 1.0, f"gamma must lie in [0, 1], got {self.gamma}"),
            (self.motifs_per_class >= 1, "motifs_per_class must be >= 1"),
            (self.motif_coefficient >= 0.0, "motif_coefficient must be >= 0"),
            (self.temperature > 0.0, "temperature must be positive"),
            (self.update_every is None or self.update_every >= 1,
             "update_every must be >= 1 or null"),
            (self.pretrain_epochs >= 1, "pretrain_epochs must be >= 1"),
            (self.lr > 0, "lr must be positive"),
            (self.weight_decay >= 0, "weight_decay must be >= 0"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.max_epochs >= 1, "max_epochs must be >= 1"),
            (self.patience >= 1, "patience must be >= 1"),
            (self.max_epochs >= self.patience, "max_epochs must be >= patience"),
            (0.0 <= self.dropout < 1.0, "dropout must lie in [0, 1)"),
            (self.jobs >= 1, "jobs must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        Processor(self.processor, self.knn_k, self.eps_theta)


@dataclass
class EpochTrace:
    epoch: int
    train_loss: float
    val_loss: float
    motif_loss: float  # negated alignment term (minimized direction); nan if unused


@dataclass
class FoldOutcome:
    accuracy: float
    traces: list[EpochTrace]
    state: dict[str, np.ndarray]


@dataclass
class RunResult:
    config: dict
    fold_accuracies: list[float]
    mean: float
    std: float
    traces: list[list[EpochTrace]]
    states: list[dict[str, np.ndarray]]
    wall_clock_sec: float

    def summary_dict(self) -> dict:
        """Deterministic payload for summary.json.

        Timing and the jobs knob are excluded: neither affects results, and
        serial vs parallel runs must produce byte-identical summaries.
        """
        config = {k: v for k, v in self.config.items() if k != "jobs"}
        return {
            "spec_version": 1,
            "config": config,
            "fold_accuracies": self.fold_accuracies,
            "mean_accuracy": self.mean,
            "std_accuracy": self.std,
        }

    def trace_rows(self) -> list[tuple]:
        rows = []
        for fold_idx, fold_traces in enumerate(self.traces):
            for t in fold_traces:
                rows.append((fold_idx, t.epoch, t.train_loss, t.val_loss, t.motif_loss))
        return rows


def result_from_outcomes(cfg: RunConfig, outcomes: list[FoldOutcome],
                         wall_clock: float) -> RunResult:
    accs = [o.accuracy for o in outcomes]
    return RunResult(
        config=config_dict(cfg),
        fold_accuracies=accs,
        mean=float(np.mean(accs)),
        std=float(np.std(accs)),
        traces=[o.traces for o in outcomes],
        states=[o.state for o in outcomes],
        wall_clock_sec=wall_clock,
    )


def config_dict(cfg: RunConfig) -> dict:
    d = dict(cfg.__dict__)
    d["data_dir"] = d["data_dir"] or ""
    return d


# ---------------------------------------------------------------------------
# data preparation (once per run, shared read-only across folds)


@dataclass
class PreparedGraph:
    adj: np.ndarray
    feats: np.ndarray
    label: int
    views: list[SubgraphView]
    # zero-padded per-view stacks for the batched pipeline (subgraph mode);
    # view_prop holds the encoder-ready propagation matrices for the
    # ORIGINAL local adjacencies (normalized for gcn, raw otherwise)
    view_feats: np.ndarray | None = None
    view_prop: np.ndarray | None = None
    view_sizes: list[int] | None = None


def whole_graph_view(adj: np.ndarray, feats: np.ndarray, gid: int) -> SubgraphView:
    return SubgraphView(parent_id=gid, center=0, nodes=list(range(adj.shape[0])),
                        local_adj=adj, local_feats=feats)


def _normalized_prop(adj: np.ndarray) -> np.ndarray:
    a1 = adj + np.eye(adj.shape[0])
    r = a1.sum(axis=1, keepdims=True) ** -0.5
    return a1 * r * r.T


def _pad_views(views: list[SubgraphView], m_cap: int, feat_dim: int, kind: str):
    k = len(views)
    feats = np.zeros((k, m_cap, feat_dim))
    prop = np.zeros((k, m_cap, m_cap))
    sizes = []
    for i, v in enumerate(views):
        m = v.size
        feats[i, :m] = v.local_feats
        if kind == "gcn":
            prop[i, :m, :m] = _normalized_prop(v.local_adj)
        else:
            prop[i, :m, :m] = v.local_adj
        sizes.append(m)
    return feats, prop, sizes


def prepare_graphs(dataset: Dataset, cfg: RunConfig, whole: bool) -> list[PreparedGraph]:
    prepared = []
    for gid, g in enumerate(dataset.graphs):
        adj = g.dense_adjacency()
        if whole:
            views = [whole_graph_view(adj, g.features, gid)]
            feats = prop = sizes = None
        else:
            views = bfs_partition(g, cfg.k_subgraphs, cfg.max_subgraph_nodes, parent_id=gid)
            feats, prop, sizes = _pad_views(views, cfg.max_subgraph_nodes,
                                            dataset.feature_dim, cfg.backbone)
        prepared.append(PreparedGraph(adj=adj, feats=g.features, label=g.label,
                                      views=views, view_feats=feats, view_prop=prop,
                                      view_sizes=sizes))
    return prepared


# ---------------------------------------------------------------------------
# models


# padded graph stacks are capped at this many float64 entries per batch;
# batches of larger graphs fall back to the per-graph path
PAD_BUDGET = 8_000_000


def _pad_graph_feats(pgs: list[PreparedGraph], n_max: int) -> np.ndarray:
    feats = np.zeros((len(pgs), n_max, pgs[0].feats.shape[1]))
    for i, pg in enumerate(pgs):
        feats[i, :pg.feats.shape[0]] = pg.feats
    return feats


class BackboneNet:
    """Plain encoder + head on the stored graph structure."""

    def __init__(self, cfg: RunConfig, in_dim: int, n_classes: int,
                 rng: np.random.Generator):
        self.kind = cfg.backbone
        self.backbone = GnnEncoder(cfg.backbone, in_dim, cfg.hidden, "backbone", rng,
                                   dropout=cfg.dropout)
        self.head = ClassifierHead(cfg.hidden, n_classes, "head", rng)

    def batch_forward(self, pgs: list[PreparedGraph], train: bool, rng,
                      want_candidates: bool = False):
        sizes = [pg.adj.shape[0] for pg in pgs]
        n_max = max(sizes)
        if len(pgs) * n_max * n_max <= PAD_BUDGET:
            prop = np.zeros((len(pgs), n_max, n_max))
            for i, pg in enumerate(pgs):
                n = sizes[i]
                prop[i, :n, :n] = _normalized_prop(pg.adj) if self.kind == "gcn" \
                    else pg.adj
            pooled = self.backbone.encode_stacked(_pad_graph_feats(pgs, n_max), sizes,
                                                  train, rng, prop_const=prop)
        else:
            hs = self.backbone.encode_many([(pg.adj, pg.feats) for pg in pgs],
                                           train, rng)
            pooled = ad.stack_rows([pool_mean(h) for h in hs])
        return self.head(pooled), [None] * len(pgs)

    def parts(self):
        return [self.backbone, self.head]

    def gsl_params(self):
        return []

    def backbone_params(self):
        return self.backbone.params() + self.head.params()

    def all_params(self):
        return self.backbone_params()


class MosgslNet:
    """Structure learner + importance gate + motif encoder + backbone.

    whole=True replaces the partition with a single graph-wide window (no
    importance gate); with_candidates controls whether candidate embeddings
    for the alignment loss are produced.
    """

    def __init__(self, cfg: RunConfig, in_dim: int, n_classes: int,
                 rng: np.random.Generator, whole: bool, with_candidates: bool):
        self.cfg = cfg
        self.whole = whole
        self.with_candidates = with_candidates
        self.learner = GraphLearner(in_dim, cfg.hidden, "learner", rng)
        self.proc = Processor(cfg.processor, cfg.knn_k, cfg.eps_theta)
        self.encoder = None
        self.scorer = None
        if not whole:
            self.encoder = GnnEncoder(cfg.backbone, in_dim, cfg.hidden, "encoder", rng,
                                      dropout=cfg.dropout)
            self.scorer = ImportanceScorer(cfg.hidden, "importance", rng)
        elif with_candidates:
            self.encoder = GnnEncoder(cfg.backbone, in_dim, cfg.hidden, "encoder", rng,
                                      dropout=cfg.dropout)
        self.backbone = GnnEncoder(cfg.backbone, in_dim, cfg.hidden, "backbone", rng,
                                   dropout=cfg.dropout)
        self.head = ClassifierHead(cfg.hidden, n_classes, "head", rng)

    def _backbone_logits(self, mats: list[Tensor], pgs, train: bool, rng) -> Tensor:
        """(B, C) logits from per-graph (differentiable) adjacency matrices."""
        sizes = [m.shape[0] for m in mats]
        n_max = max(sizes)
        if len(mats) * n_max * n_max <= PAD_BUDGET:
            stack = ad.stack_pad_square(mats, n_max)
            pooled = self.backbone.encode_stacked(_pad_graph_feats(pgs, n_max), sizes,
                                                  train, rng, adj=stack)
        else:
            hs = self.backbone.encode_many(
                [(m, pg.feats) for m, pg in zip(mats, pgs)], train, rng)
            pooled = ad.stack_rows([pool_mean(h) for h in hs])
        return self.head(pooled)

    def _batch_forward_whole(self, pgs, train, rng, want_candidates, bt):
        """Single graph-wide window per graph (ablation variants)."""
        refined = [[refine_adjacency(v.local_feats, self.learner, self.proc)
                    for v in pg.views] for pg in pgs]
        alphas = [Tensor(np.zeros(1)) for _ in pgs]
        fused = [fuse(pg.adj, pg.views, refined[i], alphas[i], self.cfg.gamma)
                 for i, pg in enumerate(pgs)]
        logits = self._backbone_logits([f.matrix for f in fused], pgs, bt, rng)
        cand_embs: list = [None] * len(pgs)
        if want_candidates and self.with_candidates:
            pairs = [(refined[i][0], pg.feats) for i, pg in enumerate(pgs)]
            encoded = self.encoder.encode_many(pairs, train, rng)
            cand_embs = [ad.stack_rows([pool_mean(h)]) for h in encoded]
        return logits, cand_embs

    def batch_forward(self, pgs: list[PreparedGraph], train: bool, rng,
                      want_candidates: bool = False,
                      backbone_train: bool | None = None):
        """Logits and optional candidate embeddings for a minibatch.

        Subgraph windows are processed as one zero-padded stack: the
        learner refines all of them in a few batched ops, the shared
        encoder scores and embeds them with minibatch-level normalization
        statistics, and only the heterogeneous fused graphs go through the
        per-graph backbone path.
        """
        bt = train if backbone_train is None else backbone_train
        if self.whole:
            return self._batch_forward_whole(pgs, train, rng, want_candidates, bt)

        feats_stack = np.concatenate([pg.view_feats for pg in pgs])
        sizes = [s for pg in pgs for s in pg.view_sizes]
        counts = [len(pg.view_sizes) for pg in pgs]
        offsets = np.concatenate([[0], np.cumsum(counts)])
        refined_stack = refine_views_stacked(feats_stack, sizes, self.learner, self.proc)

        prop_stack = np.concatenate([pg.view_prop for pg in pgs])
        pooled = self.encoder.encode_stacked(feats_stack, sizes, train, rng,
                                             prop_const=prop_stack)
        alpha_all = self.scorer(pooled)

        fused, selections = [], []
        for i, pg in enumerate(pgs):
            rows = np.arange(offsets[i], offsets[i + 1])
            alpha = ad.take_rows(alpha_all, rows, unique=True)
            weights = ad.softmax_last(alpha)
            entries = [(int(r), pg.views[k].nodes) for k, r in enumerate(rows)]
            acc = ad.weighted_block_scatter(refined_stack, entries, weights,
                                            pg.adj.shape[0])
            base = (1.0 - self.cfg.gamma) * pg.adj
            fused.append(ad.clamp(ad.add(ad.mul(acc, ad.as_tensor(self.cfg.gamma)),
                                         ad.as_tensor(base)), 0.0, 1.0))
            if want_candidates and self.with_candidates:
                order = np.argsort(-alpha.data, kind="stable")
                keep = sorted(int(r) for r in
                              order[:candidate_count(self.cfg.candidate_fraction,
                                                     len(rows))])
                selections.append([int(rows[k]) for k in keep])

        logits = self._backbone_logits(fused, pgs, bt, rng)

        cand_embs: list = [None] * len(pgs)
        if want_candidates and self.with_candidates:
            sel_rows = [r for sel in selections for r in sel]
            sel_stack = ad.take_rows(refined_stack, sel_rows, unique=True)
            sel_pooled = self.encoder.encode_stacked(
                feats_stack[sel_rows], [sizes[r] for r in sel_rows], train, rng,
                adj=sel_stack)
            ofs = 0
            for i, sel in enumerate(selections):
                cand_embs[i] = ad.take_rows(sel_pooled, np.arange(ofs, ofs + len(sel)),
                                            unique=True)
                ofs += len(sel)
        return logits, cand_embs

    def refined_dense(self, pg: PreparedGraph) -> np.ndarray:
        """Eval-mode fused adjacency as a plain array."""
        with ad.no_grad():
            rng = np.random.default_rng(0)  # eval consumes no randomness
            refined = [refine_adjacency(v.local_feats, self.learner, self.proc)
                       for v in pg.views]
            if self.whole:
                alpha = Tensor(np.zeros(1))
            else:
                pooled = [pool_mean(self.encoder(v.local_adj, v.local_feats, False, rng))
                          for v in pg.views]
                alpha = self.scorer(ad.stack_rows(pooled))
            fused = fuse(pg.adj, pg.views, refined, alpha, self.cfg.gamma)
        return fused.matrix.data

    def parts(self):
        parts = [self.learner]
        if self.encoder is not None:
            parts.append(self.encoder)
        if self.scorer is not None:
            parts.append(self.scorer)
        parts += [self.backbone, self.head]
        return parts

    def gsl_params(self):
        params = list(self.learner.params())
        if self.encoder is not None:
            params += self.encoder.params()
        if self.scorer is not None:
            params += self.scorer.params()
        return params

    def backbone_params(self):
        return self.backbone.params() + self.head.params()

    def all_params(self):
        return self.gsl_params() + self.backbone_params()


def variant_settings(cfg: RunConfig) -> RunConfig:
    """Resolve the ablation variant into concrete knobs."""
    if cfg.variant == "gsl":
        return replace(cfg, motif_coefficient=0.0)
    if cfg.variant == "sgsl":
        return replace(cfg, motif_coefficient=0.0)
    if cfg.variant == "fixed-motif":
        return replace(cfg, update_every=None)
    return cfg


def build_model(cfg: RunConfig, in_dim: int, n_classes: int, rng: np.random.Generator):
    whole = cfg.variant in ("gsl", "gsl+motif")
    use_motif = cfg.motif_coefficient > 0.0
    if cfg.gamma == 0.0 and not use_motif:
        # degenerate configuration: structure learning has no effect, so this
        # is exactly the plain backbone (bit-for-bit, including rng draws)
        return BackboneNet(cfg, in_dim, n_classes, rng)
    return MosgslNet(cfg, in_dim, n_classes, rng, whole=whole, with_candidates=use_motif)


# ---------------------------------------------------------------------------
# fitting


def _xent_numpy(logits: np.ndarray, labels: np.ndarray) -> float:
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(labels.shape[0]), labels].mean())


def _eval_logits(model, prepared, ids, rng, chunk: int = 64) -> np.ndarray:
    rows = []
    with ad.no_grad():
        for start in range(0, len(ids), chunk):
            pgs = [prepared[int(g)] for g in ids[start:start + chunk]]
            logits, _ = model.batch_forward(pgs, False, rng)
            rows.append(logits.data)
    return np.concatenate(rows)


def evaluate_loss(model, prepared, ids, labels, rng) -> float:
    return _xent_numpy(_eval_logits(model, prepared, ids, rng), labels[ids])


def evaluate_accuracy(model, prepared, ids, labels, rng) -> float:
    preds = _eval_logits(model, prepared, ids, rng).argmax(axis=1)
    return float((preds == labels[ids]).mean())


def _batches(order: np.ndarray, size: int):
    for start in range(0, order.shape[0], size):
        yield order[start:start + size]


def _snapshot(model, bank: MotifBank | None) -> dict[str, np.ndarray]:
    state = collect_state(model.parts())
    if bank is not None:
        state.update(bank.state())
    return state


def fit_model(model, prepared, labels, fold: Fold, cfg: RunConfig,
              rng: np.random.Generator, bank: MotifBank | None = None,
              gsl_only: bool = False) -> tuple[list[EpochTrace], dict[str, np.ndarray]]:
    """Early-stopped minibatch training; returns traces and the best state.

    With gsl_only=True the backbone stays frozen: it runs in eval mode and
    its parameters are excluded from the optimizer.
    """
    use_motif = bank is not None
    lam = cfg.motif_coefficient if use_motif else 0.0
    buffer = CandidateBuffer(bank.n_classes) if use_motif else None
    params = model.gsl_params() if gsl_only else model.all_params()
    opt = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)

    best_val = math.inf
    best_state = _snapshot(model, bank)
    best_epoch = -1
    traces: list[EpochTrace] = []

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(fold.train)
        task_losses, motif_terms = [], []
        for batch in _batches(order, cfg.batch_size):
            pgs = [prepared[int(g)] for g in batch]
            kwargs = {"backbone_train": False} if gsl_only else {}
            logits, cand_lists = model.batch_forward(
                pgs, True, rng, want_candidates=use_motif, **kwargs)
            batch_motifs = []
            for i, gid in enumerate(batch):
                if use_motif and cand_lists[i] is not None:
                    batch_motifs.append(
                        alignment_loss(cand_lists[i], int(labels[gid]), bank,
                                       cfg.temperature, cfg.numerator))
                    for emb in cand_lists[i].data:
                        buffer.append(int(labels[gid]), emb, int(gid))
            task = ad.cross_entropy_with_logits(logits, labels[batch])
            if batch_motifs:
                acc = batch_motifs[0]
                for m in batch_motifs[1:]:
                    acc = ad.add(acc, m)
                motif_mean = ad.mul(acc, ad.as_tensor(1.0 / len(batch_motifs)))
                loss = total_loss(task, motif_mean, lam)
                motif_terms.append(-motif_mean.item())
            else:
                loss = task
            if not math.isfinite(loss.item()):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch} (task={task.item()!r})")
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            task_losses.append(task.item())

        if use_motif and cfg.update_every is not None and (epoch + 1) % cfg.update_every == 0:
            extract_motifs(buffer, bank)

        val_loss = evaluate_loss(model, prepared, fold.val, labels, rng)
        if not math.isfinite(val_loss):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        traces.append(EpochTrace(
            epoch=epoch,
            train_loss=float(np.mean(task_losses)),
            val_loss=val_loss,
            motif_loss=float(np.mean(motif_terms)) if motif_terms else math.nan,
        ))
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = _snapshot(model, bank)
        elif epoch - best_epoch >= cfg.patience:
            break

    load_state(model.parts(), best_state)
    if bank is not None:
        bank.vectors = MotifBank.from_state(best_state).vectors
    return traces, best_state


def _view_stacks(pg: PreparedGraph, kind: str):
    if pg.view_feats is not None:
        return pg.view_feats, pg.view_prop, pg.view_sizes
    # whole-graph window: a one-view stack built on demand
    view = pg.views[0]
    prop = _normalized_prop(view.local_adj) if kind == "gcn" else view.local_adj
    return (view.local_feats[None, :, :], prop[None, :, :], [view.size])


def make_bank(cfg: RunConfig, model, prepared, labels, fold: Fold, n_classes: int,
              in_dim: int, rng: np.random.Generator) -> MotifBank | None:
    if not (isinstance(model, MosgslNet) and model.with_candidates):
        return None
    if cfg.motif_init == "random":
        return init_random_bank(n_classes, cfg.motifs_per_class, cfg.hidden, rng)
    stacks = [_view_stacks(pg, cfg.backbone) for pg in prepared]
    return pretrain_bank(stacks, labels, fold.train, in_dim, cfg.hidden,
                         cfg.backbone, n_classes, cfg.motifs_per_class, rng,
                         lr=cfg.lr, weight_decay=cfg.weight_decay,
                         batch_size=cfg.batch_size, epochs=cfg.pretrain_epochs)


# ---------------------------------------------------------------------------
# per-fold regimes


def dense_to_edges(adj: np.ndarray, tol: float = 1e-12) -> list[tuple[int, int, float]]:
    n = adj.shape[0]
    edges = []
    for u in range(n):
        for v in range(u + 1, n):
            if adj[u, v] > tol:
                edges.append((u, v, float(adj[u, v])))
    return edges


def refine_dataset_structures(model: MosgslNet,
                              prepared: list[PreparedGraph]) -> dict[int, list]:
    return {gid: dense_to_edges(model.refined_dense(pg))
            for gid, pg in enumerate(prepared)}


def _co_fold(cfg, dataset, prepared, labels, fold, rng) -> FoldOutcome:
    model = build_model(cfg, dataset.feature_dim, dataset.num_classes, rng)
    bank = make_bank(cfg, model, prepared, labels, fold, dataset.num_classes,
                     dataset.feature_dim, rng)
    traces, best_state = fit_model(model, prepared, labels, fold, cfg, rng, bank)
    acc = evaluate_accuracy(model, prepared, fold.test, labels, rng)
    return FoldOutcome(accuracy=acc, traces=traces, state=best_state)


def _prepared_with_adjacency(prepared, structures) -> list[PreparedGraph]:
    out = []
    for gid, pg in enumerate(prepared):
        if gid not in structures:
            raise ConfigError(f"refined structures missing graph {gid}")
        n = pg.adj.shape[0]
        adj = np.zeros_like(pg.adj)
        for u, v, w in structures[gid]:
            if not (0 <= u < n and 0 <= v < n) or not 0.0 <= w <= 1.0:
                raise ConfigError(
                    f"graph {gid}: bad refined edge ({u}, {v}, {w}) for {n} nodes")
            adj[u, v] = adj[v, u] = w
        out.append(PreparedGraph(adj=adj, feats=pg.feats, label=pg.label, views=pg.views))
    return out


def _pre_fold(cfg, dataset, prepared, labels, fold, rng,
              structures: dict[int, list] | None) -> FoldOutcome:
    """Train the structure learner, export refined graphs, retrain fresh."""
    phase_traces: list[EpochTrace] = []
    if structures is None:
        if cfg.gamma == 0.0 and cfg.motif_coefficient == 0.0:
            # degenerate: refinement cannot change anything, skip phase one
            # entirely so the retrained backbone matches the plain baseline
            structures = {gid: dense_to_edges(pg.adj) for gid, pg in enumerate(prepared)}
        else:
            model = build_model(cfg, dataset.feature_dim, dataset.num_classes, rng)
            bank = make_bank(cfg, model, prepared, labels, fold, dataset.num_classes,
                             dataset.feature_dim, rng)
            phase_traces, _ = fit_model(model, prepared, labels, fold, cfg, rng, bank)
            structures = refine_dataset_structures(model, prepared)
    refined_prepared = _prepared_with_adjacency(prepared, structures)
    fresh = BackboneNet(cfg, dataset.feature_dim, dataset.num_classes, rng)
    traces, best_state = fit_model(fresh, refined_prepared, labels, fold, cfg, rng)
    acc = evaluate_accuracy(fresh, refined_prepared, fold.test, labels, rng)
    return FoldOutcome(accuracy=acc, traces=phase_traces + traces, state=best_state)


def _test_fold(cfg, dataset, prepared, labels, fold, rng) -> FoldOutcome:
    """Freeze a trained backbone, fit only the structure learner against it,
    then classify the refined test graphs with the frozen backbone."""
    backbone_only = BackboneNet(cfg, dataset.feature_dim, dataset.num_classes, rng)
    traces_a, frozen_state = fit_model(backbone_only, prepared, labels, fold, cfg, rng)

    model = MosgslNet(cfg, dataset.feature_dim, dataset.num_classes, rng,
                      whole=cfg.variant in ("gsl", "gsl+motif"),
                      with_candidates=cfg.motif_coefficient > 0.0)
    load_state([model.backbone, model.head], frozen_state)
    before = collect_state([model.backbone, model.head])
    bank = make_bank(cfg, model, prepared, labels, fold, dataset.num_classes,
                     dataset.feature_dim, rng)
    traces_b, best_state = fit_model(model, prepared, labels, fold, cfg, rng, bank,
                                     gsl_only=True)
    after = collect_state([model.backbone, model.head])
    for k in before:
        if not np.array_equal(before[k], after[k]):
            raise RuntimeError(f"frozen backbone drifted during GSL training: {k}")

    acc = evaluate_accuracy(model, prepared, fold.test, labels, rng)
    return FoldOutcome(accuracy=acc, traces=traces_a + traces_b, state=best_state)


def run_fold(cfg: RunConfig, dataset: Dataset, prepared: list[PreparedGraph],
             fold: Fold, fold_idx: int,
             structures: dict[int, list] | None = None) -> FoldOutcome:
    labels = dataset.labels()
    rng = np.random.default_rng(cfg.seed + fold_idx)
    if cfg.regime == "co":
        return _co_fold(cfg, dataset, prepared, labels, fold, rng)
    if cfg.regime == "pre":
        return _pre_fold(cfg, dataset, prepared, labels, fold, rng, structures)
    if cfg.regime == "test":
        return _test_fold(cfg, dataset, prepared, labels, fold, rng)
    raise ConfigError(f"unknown regime: {cfg.regime}")


# ---------------------------------------------------------------------------
# whole runs


_WORKER_CTX: dict = {}


def _init_worker(cfg, dataset, prepared, plan, structures):
    _WORKER_CTX.update(cfg=cfg, dataset=dataset, prepared=prepared, plan=plan,
                       structures=structures)


def _worker_run_fold(fold_idx: int) -> FoldOutcome:
    c = _WORKER_CTX
    return run_fold(c["cfg"], c["dataset"], c["prepared"], c["plan"].folds[fold_idx],
                    fold_idx, c["structures"])


def run_regime(cfg: RunConfig, dataset: Dataset,
               structures: dict[int, list] | None = None) -> RunResult:
    """Ten-fold evaluation of the configured regime and variant."""
    cfg = variant_settings(cfg)
    cfg.validate()
    start = time.perf_counter()
    plan = make_fold_plan(dataset, cfg.seed)
    whole = cfg.variant in ("gsl", "gsl+motif")
    prepared = prepare_graphs(dataset, cfg, whole)

    n_folds = len(plan.folds)
    if cfg.jobs > 1:
        with ProcessPoolExecutor(
                max_workers=min(cfg.jobs, n_folds), initializer=_init_worker,
                initargs=(cfg, dataset, prepared, plan, structures)) as pool:
            outcomes = list(pool.map(_worker_run_fold, range(n_folds)))
    else:
        outcomes = [run_fold(cfg, dataset, prepared, plan.folds[i], i, structures)
                    for i in range(n_folds)]
    return result_from_outcomes(cfg, outcomes, time.perf_counter() - start)


def run_ablation(cfg: RunConfig, dataset: Dataset,
                 variants: list[str]) -> dict[str, RunResult]:
    """One run per variant under identical seeds."""
    results = {}
    for variant in variants:
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant: {variant}")
        if variant not in results:
            results[variant] = run_regime(replace(cfg, variant=variant), dataset)
    return results


def motif_update_improvements(result: RunResult, period: int,
                              window: int = 5) -> tuple[int, int]:
    """(improved, total) motif-update boundaries across all fold traces.

    A boundary improves when the mean motif loss over the window epochs
    after the update is below the mean over the window epochs up to and
    including it. Boundaries without a full window on both sides are
    skipped.
    """
    improved = total = 0
    for fold_traces in result.traces:
        motif = [t.motif_loss for t in fold_traces]
        for b in range(period - 1, len(motif), period):
            if b < window - 1 or b + window >= len(motif):
                continue
            before = float(np.mean(motif[b - window + 1:b + 1]))
            after = float(np.mean(motif[b + 1:b + 1 + window]))
            total += 1
            improved += after < before
    return improved, total
