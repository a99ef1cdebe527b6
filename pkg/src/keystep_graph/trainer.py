"""Five-fold cross-validation with one Adam step per graph.

Training graphs hold every view (and text, for the hetero variants) and
every vision node contributes to the loss. Validation graphs are rebuilt
from the ego view only (plus text for hetero variants) and scored on ego
nodes. Folds are assigned per take so no take straddles train and
validation.
"""
from __future__ import annotations

import csv
import enum
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .datamodel import Manifest, PooledTake, pool_take
from .errors import DivergedLoss, TooFewTakes
from .graphs import (
    ContextMode,
    EdgeType,
    Graph,
    NodeType,
    build_ego_graphs,
    build_hetero_graphs,
    build_multiview_graphs,
)
from .metrics import MetricsReport, PredictionRecord, aggregate_folds, f1_at_threshold, fold_metrics, top1_accuracy
from .model import ModelConfig, ModelParams, forward, init_params, predict

log = logging.getLogger(__name__)

NUM_FOLDS = 5


class Variant(enum.Enum):
    EgoOnly = "ego"
    MultiView = "multiview"
    Hetero = "hetero"
    MultiViewHetero = "multiview-hetero"

    @property
    def uses_exo(self) -> bool:
        return self in (Variant.MultiView, Variant.MultiViewHetero)

    @property
    def uses_text(self) -> bool:
        return self in (Variant.Hetero, Variant.MultiViewHetero)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    early_stop_patience: Optional[int] = 20
    variant: Variant = Variant.EgoOnly
    context: ContextMode = ContextMode.FullContext
    threshold: float = 0.1
    exo_temporal_edges: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "context", ContextMode(self.context))
        # zero is allowed: it gives the null-update check
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.early_stop_patience is not None and not 0 < self.early_stop_patience < self.epochs:
            raise ValueError("early_stop_patience must lie in (0, epochs)")


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Bias-corrected Adam.

    Parameter arrays are moved into one flat buffer (each tensor keeps a
    view) so a step is a handful of vectorised operations.
    """

    def __init__(self, params, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.flat = np.concatenate([p.data.ravel() for p in self.params])
        self._slices = []
        pos = 0
        for p in self.params:
            n = p.data.size
            view = self.flat[pos : pos + n].reshape(p.data.shape)
            p.data = view
            self._slices.append(slice(pos, pos + n))
            pos += n
        self.m = np.zeros_like(self.flat)
        self.v = np.zeros_like(self.flat)
        self._g = np.zeros_like(self.flat)

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        g = self._g
        for p, s in zip(self.params, self._slices):
            if p.grad is None:
                g[s] = 0.0
            else:
                g[s] = p.grad.ravel()
        self.m *= b1
        self.m += (1.0 - b1) * g
        self.v *= b2
        self.v += (1.0 - b2) * (g * g)
        m_hat = self.m / (1.0 - b1**self.t)
        v_hat = self.v / (1.0 - b2**self.t)
        self.flat -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# folds


def make_folds(take_ids: Sequence[str], seed: int, num_folds: int = NUM_FOLDS) -> dict[str, int]:
    """Seeded shuffle, then round-robin assignment of takes to folds."""
    take_ids = list(take_ids)
    if len(take_ids) < num_folds:
        raise TooFewTakes(f"need at least {num_folds} takes, got {len(take_ids)}")
    if len(set(take_ids)) != len(take_ids):
        raise ValueError("take ids must be unique")
    order = np.random.default_rng(seed).permutation(len(take_ids))
    return {take_ids[j]: pos % num_folds for pos, j in enumerate(order)}


# ---------------------------------------------------------------------------
# graphs per variant


def training_graphs(pooled: PooledTake, variant: Variant, mode: ContextMode, exo_temporal_edges=False) -> list[Graph]:
    take = pooled.take
    if variant is Variant.EgoOnly:
        return build_ego_graphs(take, pooled.ego, mode)
    if variant is Variant.MultiView:
        return build_multiview_graphs(take, pooled.ego, pooled.exo, mode, exo_temporal_edges)
    return build_hetero_graphs(
        take, pooled.ego, pooled.text, mode,
        include_exo=variant is Variant.MultiViewHetero, exo_vectors=pooled.exo, exo_temporal_edges=exo_temporal_edges,
    )


def inference_graphs(pooled: PooledTake, variant: Variant, mode: ContextMode) -> list[Graph]:
    """Ego-only graphs, plus text nodes for the hetero variants."""
    if variant.uses_text:
        return build_hetero_graphs(pooled.take, pooled.ego, pooled.text, mode)
    return build_ego_graphs(pooled.take, pooled.ego, mode)


def model_config_for(manifest: Manifest, variant: Variant, **overrides) -> ModelConfig:
    variant = Variant(variant)
    dims = {NodeType.EgoVision: manifest.feature_dim_vision}
    edges = {EdgeType.Temporal}
    if variant.uses_exo:
        dims[NodeType.ExoVision] = manifest.feature_dim_vision
        edges.add(EdgeType.EgoExo)
    if variant.uses_text:
        dims[NodeType.Text] = manifest.feature_dim_text
        edges.add(EdgeType.VisionText)
    overrides.setdefault("input_dims", dims)
    overrides.setdefault("edge_types_active", frozenset(edges))
    return ModelConfig(num_classes=manifest.num_classes, **overrides)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_acc: float
    val_f1: float


@dataclass
class FoldResult:
    params: ModelParams
    trace: list[EpochRecord]
    best_epoch: int
    best_acc: float
    fold: int = 0
    records: list[PredictionRecord] = field(default_factory=list)


def predict_records(graphs: Sequence[Graph], params: ModelParams, config: ModelConfig) -> list[PredictionRecord]:
    out = []
    for g in graphs:
        p = predict(g, params, config)
        for nid, c, conf in zip(p.node_ids, p.classes, p.confidences):
            node = g.nodes[nid]
            out.append(PredictionRecord(g.take_id, node.segment_index, node.label, int(c), float(min(conf, 1.0))))
    return out


def train_step(graph: Graph, params: ModelParams, config: ModelConfig, optimizer: Adam, rng) -> float:
    params.zero_grad()
    with ad.Tape():
        logits = forward(graph, params, config, training=True, rng=rng)
        loss = ad.softmax_cross_entropy(logits, graph.labels, graph.train_mask)
    ad.backward(loss)
    value = float(loss.data[0, 0])
    if not math.isfinite(value):
        return value
    optimizer.step()
    return value


def train_fold(
    train_graphs: Sequence[Graph],
    val_graphs: Sequence[Graph],
    model_config: ModelConfig,
    train_config: TrainConfig,
    seed: Optional[int] = None,
    fold: int = 0,
) -> FoldResult:
    """Train from a fresh initialization; return the best-validation-accuracy params.

    ``seed`` defaults to ``train_config.seed``.
    """
    train_graphs = list(train_graphs)
    if not train_graphs:
        raise ValueError("train_fold needs at least one training graph")
    for g in train_graphs:
        if not g.train_mask.any():
            raise ValueError(f"training graph of take {g.take_id} has no train-masked node")
    seed = train_config.seed if seed is None else seed
    init_ss, loop_ss = np.random.SeedSequence(seed).spawn(2)
    params = init_params(model_config, int(init_ss.generate_state(1)[0]))
    rng = np.random.default_rng(loop_ss)
    tc = train_config
    opt = Adam(params, tc.learning_rate, tc.beta1, tc.beta2, tc.eps)

    best = params.copy()
    best_acc, best_epoch, stale = -math.inf, -1, 0
    trace: list[EpochRecord] = []
    for epoch in range(tc.epochs):
        total = 0.0
        for gi in rng.permutation(len(train_graphs)):
            g = train_graphs[gi]
            loss = train_step(g, params, model_config, opt, rng)
            if not math.isfinite(loss):
                raise DivergedLoss(f"fold {fold} epoch {epoch}: loss {loss} on take {g.take_id} window {g.window}")
            # relu maps NaN to 0, so a blown-up step can hide behind a finite loss
            if not np.isfinite(opt.flat).all():
                raise DivergedLoss(f"fold {fold} epoch {epoch}: non-finite parameters after take {g.take_id} window {g.window}")
            total += loss
        records = predict_records(val_graphs, params, model_config)
        acc = top1_accuracy(records) if records else 0.0
        f1 = f1_at_threshold(records, tc.threshold, model_config.num_classes) if records else 0.0
        trace.append(EpochRecord(epoch, total / len(train_graphs), acc, f1))
        if acc > best_acc:
            best, best_acc, best_epoch, stale = params.copy(), acc, epoch, 0
        else:
            stale += 1
            if tc.early_stop_patience is not None and stale >= tc.early_stop_patience:
                break
    return FoldResult(best, trace, best_epoch, best_acc, fold)


def write_trace(path, trace: Sequence[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_acc", "val_f1_at_0.1"])
        for r in trace:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_acc), repr(r.val_f1)])


# ---------------------------------------------------------------------------
# cross-validation


@dataclass
class CVResult:
    report: MetricsReport
    folds: list[FoldResult]
    assignment: dict[str, int]
    model_config: ModelConfig
    num_train_graphs: int

    @property
    def records(self) -> list[PredictionRecord]:
        return [r for f in self.folds for r in f.records]


def _run_fold(args) -> FoldResult:
    fold, train_g, val_g, model_config, train_config = args
    res = train_fold(train_g, val_g, model_config, train_config, seed=train_config.seed + fold, fold=fold)
    res.records = predict_records(val_g, res.params, model_config)
    return res


def pool_manifest(manifest: Manifest) -> list[PooledTake]:
    return [pool_take(manifest, t) for t in manifest.takes]


def cross_validate(
    manifest: Manifest,
    model_config: Optional[ModelConfig],
    train_config: TrainConfig,
    pooled: Optional[Sequence[PooledTake]] = None,
    parallel_folds: int = 1,
) -> CVResult:
    tc = train_config
    if model_config is None:
        model_config = model_config_for(manifest, tc.variant)
    if pooled is None:
        pooled = pool_manifest(manifest)
    assignment = make_folds([p.take.take_id for p in pooled], tc.seed)
    train_by_take = {p.take.take_id: training_graphs(p, tc.variant, tc.context, tc.exo_temporal_edges) for p in pooled}
    val_by_take = {p.take.take_id: inference_graphs(p, tc.variant, tc.context) for p in pooled}

    jobs = []
    for fold in range(NUM_FOLDS):
        train_ids = [t for t, f in assignment.items() if f != fold]
        val_ids = [t for t, f in assignment.items() if f == fold]
        if set(train_ids) & set(val_ids):
            raise AssertionError(f"fold {fold}: take leakage between train and validation")
        train_g = [g for t in train_ids for g in train_by_take[t]]
        val_g = [g for t in val_ids for g in val_by_take[t]]
        jobs.append((fold, train_g, val_g, model_config, tc))

    if parallel_folds > 1:
        with ProcessPoolExecutor(parallel_folds) as pool:
            results = list(pool.map(_run_fold, jobs))
    else:
        results = [_run_fold(j) for j in jobs]

    per_fold = [fold_metrics(r.fold, r.records, tc.threshold, model_config.num_classes) for r in results]
    report = aggregate_folds(per_fold, tc.variant.value, tc.context.value, tc.threshold)
    n_graphs = sum(len(v) for v in train_by_take.values())
    return CVResult(report, results, assignment, model_config, n_graphs)
