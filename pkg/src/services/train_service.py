"""Two-layer mean-aggregation GCN trained on sampled minibatches"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from ..exceptions import ConfigurationError, ParameterError, ShapeError
from ..models import BYTES_PER_VALUE, ModelSpec, PartitionMethod, SamplerConfig, TrainReport
from .cache_service import CacheAccounting, CacheState, hit_rate, localize_cache, retrieve_features
from .graph_service import Graph, Partition, partition_graph
from .numeric import cross_entropy, glorot_uniform
from .sampler_service import SampleBatch, sample_khop

logger = logging.getLogger("gnn_autotune.train")


@dataclass(frozen=True, eq=False)
class Model:
    W1: np.ndarray
    W2: np.ndarray
    seed: int

    def copy(self) -> "Model":
        return Model(self.W1.copy(), self.W2.copy(), self.seed)


@dataclass(frozen=True, eq=False)
class Gradients:
    dW1: np.ndarray
    dW2: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.dW1 ** 2) + np.sum(self.dW2 ** 2)))


@dataclass(frozen=True, eq=False)
class Activations:
    a1: sp.csr_matrix  # |U| x |U| mean aggregation over hop-2 edges
    a0: sp.csr_matrix  # |S| x |U| mean aggregation over hop-1 edges, seed rows
    z1: np.ndarray
    p1: np.ndarray
    h1: np.ndarray
    z2: np.ndarray


@dataclass(frozen=True, eq=False)
class WorkerBatch:
    batch: SampleBatch
    features: np.ndarray
    labels: np.ndarray
    batch_bytes: int = 0


def init_model(spec: ModelSpec, seed: int) -> Model:
    rng = np.random.default_rng(seed)
    w1 = glorot_uniform(spec.feat_dim, spec.hidden_dim, rng)
    w2 = glorot_uniform(spec.hidden_dim, spec.num_classes, rng)
    return Model(w1, w2, seed)


def mean_aggregator(rows: int, cols: int, edges: np.ndarray, self_index: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """Row-normalised aggregation; rows without edges fall back to self_index[row]"""
    dst = edges[:, 0] if edges.size else np.empty(0, dtype=np.int64)
    src = edges[:, 1] if edges.size else np.empty(0, dtype=np.int64)
    counts = np.bincount(dst, minlength=rows)
    empty = np.flatnonzero(counts == 0)
    if self_index is None:
        self_index = np.arange(rows)
    dst = np.concatenate([dst, empty])
    src = np.concatenate([src, self_index[empty]])
    counts = np.bincount(dst, minlength=rows).astype(np.float64)
    data = 1.0 / counts[dst]
    return sp.csr_matrix((data, (dst, src)), shape=(rows, cols))


def forward(model: Model, batch: SampleBatch, feats: np.ndarray) -> Tuple[np.ndarray, Activations]:
    n_unique = batch.unique_nodes.shape[0]
    if feats.ndim != 2 or feats.shape[0] != n_unique:
        raise ShapeError(f"features must have {n_unique} rows, got shape {feats.shape}")
    if feats.shape[1] != model.W1.shape[0]:
        raise ShapeError(f"feature width {feats.shape[1]} != model input {model.W1.shape[0]}")
    if len(batch.layers) > 2:
        raise ShapeError(f"two-layer model cannot consume {len(batch.layers)} sampled hops")
    empty = np.empty((0, 2), dtype=np.int64)
    hop1 = batch.layers[0] if batch.layers else empty
    hop2 = batch.layers[1] if len(batch.layers) > 1 else empty
    n_seeds = int(np.unique(batch.seeds).shape[0])
    # seeds occupy the first positions of unique_nodes
    a1 = mean_aggregator(n_unique, n_unique, hop2)
    a0 = mean_aggregator(n_seeds, n_unique, hop1)
    z1 = np.asarray(a1 @ feats.astype(np.float64))
    p1 = z1 @ model.W1
    h1 = np.maximum(p1, 0.0)
    z2 = np.asarray(a0 @ h1)
    logits = z2 @ model.W2
    return logits, Activations(a1, a0, z1, p1, h1, z2)


def compute_gradients(model: Model, logits: np.ndarray, labels: np.ndarray,
                      acts: Activations) -> Tuple[Gradients, float]:
    if logits.shape[0] != labels.shape[0]:
        raise ShapeError(f"{logits.shape[0]} logits rows for {labels.shape[0]} labels")
    loss, dlogits = cross_entropy(logits, labels)
    dW2 = acts.z2.T @ dlogits
    dh1 = np.asarray(acts.a0.T @ (dlogits @ model.W2.T))
    dp1 = dh1 * (acts.p1 > 0)
    dW1 = acts.z1.T @ dp1
    return Gradients(dW1, dW2), loss


def apply_gradients(model: Model, grads: Gradients, lr: float) -> Model:
    if lr == 0.0:
        return model.copy()
    return Model(model.W1 - lr * grads.dW1, model.W2 - lr * grads.dW2, model.seed)


def backward_step(model: Model, logits: np.ndarray, labels: np.ndarray, acts: Activations,
                  lr: float) -> Tuple[Model, float]:
    grads, loss = compute_gradients(model, logits, labels, acts)
    return apply_gradients(model, grads, lr), loss


def sync_gradients(grads: Sequence[Gradients]) -> Gradients:
    if not grads:
        raise ParameterError("nothing to synchronise")
    first = grads[0]
    for g in grads[1:]:
        if g.dW1.shape != first.dW1.shape or g.dW2.shape != first.dW2.shape:
            raise ShapeError("gradient shapes differ across workers")
    if len(grads) == 1:
        return first
    return Gradients(np.mean([g.dW1 for g in grads], axis=0), np.mean([g.dW2 for g in grads], axis=0))


def seed_labels(batch: SampleBatch, labels: np.ndarray) -> np.ndarray:
    n_seeds = int(np.unique(batch.seeds).shape[0])
    return labels[batch.unique_nodes[:n_seeds]]


def train_step(model: Model, worker_batches: Sequence[WorkerBatch], lr: float) -> Tuple[Model, float, int]:
    """One synchronous step: per-worker forward and gradients, mean sync, single update.

    Returns the new model, mean worker loss and the largest activation footprint.
    """
    grads, losses, act_bytes = [], [], 0
    for wb in worker_batches:
        logits, acts = forward(model, wb.batch, wb.features)
        g, loss = compute_gradients(model, logits, wb.labels, acts)
        grads.append(g)
        losses.append(loss)
        act_bytes = max(act_bytes, (acts.h1.size + logits.size) * BYTES_PER_VALUE)
    synced = sync_gradients(grads)
    return apply_gradients(model, synced, lr), float(np.mean(losses)), act_bytes


def full_graph_logits(model: Model, g: Graph) -> np.ndarray:
    src, dst = g.edge_list()
    agg = mean_aggregator(g.num_nodes, g.num_nodes, np.stack([src, dst], axis=1))
    h1 = np.maximum(np.asarray(agg @ g.features.astype(np.float64)) @ model.W1, 0.0)
    return np.asarray(agg @ h1) @ model.W2


def evaluate(model: Model, g: Graph) -> float:
    """Full-graph inference accuracy on the test mask"""
    test = np.flatnonzero(g.test_mask)
    if test.size == 0:
        raise ConfigurationError("graph has no test nodes")
    pred = full_graph_logits(model, g)[test].argmax(axis=1)
    return float(np.mean(pred == g.labels[test]))


def plan_epoch(partitions: Sequence[Partition], batch_size: int, epoch: int,
               seed: int) -> List[List[Tuple[int, np.ndarray]]]:
    """Per iteration, the (partition index, local seed ids) of every active worker"""
    if batch_size < 1:
        raise ParameterError(f"batch_size must be >= 1, got {batch_size}")
    chunks_per_part = []
    for idx, part in enumerate(partitions):
        core = part.local_core
        train = core[part.local_graph.train_mask[core]]
        order = np.random.default_rng([abs(seed), epoch, idx]).permutation(train)
        chunks_per_part.append([order[s:s + batch_size] for s in range(0, order.shape[0], batch_size)])
    iterations = max((len(c) for c in chunks_per_part), default=0)
    plan = []
    for it in range(iterations):
        plan.append([(idx, chunks[it]) for idx, chunks in enumerate(chunks_per_part) if it < len(chunks)])
    return plan


def prepare_worker_batch(part: Partition, local_seeds: np.ndarray, sampler_cfg: SamplerConfig,
                         local_cache: CacheState, acc: CacheAccounting,
                         salt: Sequence[int]) -> WorkerBatch:
    g = part.local_graph
    batch = sample_khop(g, local_seeds, sampler_cfg, local_cache, salt=salt)
    feats, stats = retrieve_features(batch, local_cache, g, acc)
    return WorkerBatch(batch, feats, seed_labels(batch, g.labels), stats.batch_bytes)


@dataclass
class TrainingRun:
    model: Model
    report: TrainReport
    accounting: CacheAccounting


def prepare_partitions(g: Graph, u: int, partitions: Optional[List[Partition]],
                       method: PartitionMethod) -> List[Partition]:
    if partitions is not None:
        return partitions
    return partition_graph(g, u, method)[0]


def run_training(g: Graph, spec: ModelSpec, sampler_cfg: SamplerConfig, cache: Optional[CacheState],
                 batch_size: int, epochs: int, u: int = 1, *, partitions: Optional[List[Partition]] = None,
                 method: PartitionMethod = PartitionMethod.HASH, seed: int = 0,
                 reference_accuracy: Optional[float] = None) -> TrainingRun:
    if not np.any(g.train_mask):
        raise ConfigurationError("graph has no train nodes")
    if spec.feat_dim != g.feat_dim:
        raise ShapeError(f"model feat_dim {spec.feat_dim} != graph feat_dim {g.feat_dim}")
    parts = prepare_partitions(g, u, partitions, method)
    if cache is None:
        cache = CacheState.empty(g.num_nodes, len(parts))
    local_caches = [localize_cache(cache, p) for p in parts]
    acc = CacheAccounting(cache.num_devices)
    model = init_model(spec, seed)
    loss_curve: List[float] = []
    max_bytes = act_bytes = 0

    for epoch in range(epochs):
        losses = []
        for it, work in enumerate(plan_epoch(parts, batch_size, epoch, seed)):
            worker_batches = [
                prepare_worker_batch(parts[idx], seeds, sampler_cfg, local_caches[idx], acc,
                                     salt=(epoch, it, idx))
                for idx, seeds in work
            ]
            model, loss, step_act = train_step(model, worker_batches, spec.learning_rate)
            losses.append(loss)
            act_bytes = max(act_bytes, step_act)
            max_bytes = max(max_bytes, max(wb.batch_bytes for wb in worker_batches))
        loss_curve.append(float(np.mean(losses)) if losses else 0.0)
        logger.debug(f"epoch {epoch}: loss={loss_curve[-1]:.4f}")

    accuracy = evaluate(model, g)
    report = TrainReport(
        test_accuracy=accuracy,
        epochs_run=epochs,
        loss_curve=loss_curve,
        reference_accuracy=reference_accuracy,
        accuracy_drop=None if reference_accuracy is None else reference_accuracy - accuracy,
        max_batch_bytes=max_bytes,
        activation_bytes=act_bytes,
        hit_rate=hit_rate(acc) if acc.total else None,
    )
    return TrainingRun(model, report, acc)


def train(g: Graph, spec: ModelSpec, sampler_cfg: SamplerConfig, cache: Optional[CacheState],
          batch_size: int, epochs: int, u: int = 1, **kwargs) -> TrainReport:
    return run_training(g, spec, sampler_cfg, cache, batch_size, epochs, u, **kwargs).report


def measure_accuracy_drop(g: Graph, spec: ModelSpec, sampler_cfg: SamplerConfig, cache: Optional[CacheState],
                          batch_size: int, epochs: int, u: int = 1, **kwargs) -> TrainReport:
    """Train once at bias rate 1 for the reference, then at the configured rate"""
    reference_cfg = sampler_cfg.model_copy(update={"bias_rate": 1.0})
    reference = train(g, spec, reference_cfg, cache, batch_size, epochs, u, **kwargs)
    return train(g, spec, sampler_cfg, cache, batch_size, epochs, u,
                 reference_accuracy=reference.test_accuracy, **kwargs)
