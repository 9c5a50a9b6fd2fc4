"""Weighted reservoir sampling and locality-aware k-hop neighbor sampling"""
import heapq
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..exceptions import GraphFormatError, ParameterError
from ..models import SamplerConfig, SamplingStrategy
from .cache_service import CacheAccounting, CacheState, hit_rate, lookup
from .graph_service import Graph

logger = logging.getLogger("gnn_autotune.sampler")

KeyHook = Callable[[int, float], None]


@dataclass(frozen=True, eq=False)
class SampleBatch:
    layers: List[np.ndarray]  # per hop, (k, 2) array of (dst, src) positions into unique_nodes
    unique_nodes: np.ndarray
    seeds: np.ndarray
    num_duplicates_removed: int

    @property
    def num_edges(self) -> int:
        return int(sum(layer.shape[0] for layer in self.layers))


class SamplerRNG:
    """Counter-based streams: one independent Philox stream per (salt, layer, node)"""

    def __init__(self, seed: int):
        self.seed = seed

    def layer_key(self, salt: Sequence[int], layer: int) -> np.ndarray:
        return np.random.SeedSequence([abs(int(self.seed)), *map(int, salt), layer]).generate_state(2, np.uint64)

    def stream(self, key: np.ndarray, node: int) -> np.random.Generator:
        # node id lives in a high counter word so per-node streams never overlap
        counter = np.array([0, 0, node, 0], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key, counter=counter))


def weighted_reservoir_sample(neighbors: Sequence[int], weights: Sequence[float], m: int,
                              rng: np.random.Generator, key_hook: Optional[KeyHook] = None) -> List[int]:
    """Draw min(m, |neighbors|) distinct items; item j gets key U**(1/w_j).

    A new item evicts the smallest retained key only when its own key is
    strictly greater. Results come back in input order.
    """
    if m < 1:
        raise ParameterError(f"reservoir size must be >= 1, got {m}")
    n = len(neighbors)
    if len(weights) != n:
        raise ParameterError(f"{n} neighbors but {len(weights)} weights")
    if n == 0:
        return []
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ParameterError("weights must be finite and > 0")
    keys = rng.random(n) ** (1.0 / w)
    reservoir: list = []
    for j in range(n):
        k = float(keys[j])
        if key_hook is not None:
            key_hook(j, k)
        if len(reservoir) < m:
            heapq.heappush(reservoir, (k, j))
        elif k > reservoir[0][0]:
            heapq.heapreplace(reservoir, (k, j))
    return [neighbors[j] for j in sorted(j for _, j in reservoir)]


def uniform_reservoir_sample(items: Sequence[int], m: int, rng: np.random.Generator) -> List[int]:
    """Unweighted reservoir (Algorithm R), results in input order"""
    if m < 1:
        raise ParameterError(f"reservoir size must be >= 1, got {m}")
    reservoir = list(range(min(m, len(items))))
    for i in range(m, len(items)):
        j = int(rng.integers(0, i + 1))
        if j < m:
            reservoir[j] = i
    return [items[i] for i in sorted(reservoir)]


def assign_weights(neighbors: Sequence[int], cache: Optional[CacheState], gamma: float) -> np.ndarray:
    if gamma < 1.0:
        raise ParameterError(f"bias rate must be >= 1, got {gamma}")
    weights = np.ones(len(neighbors), dtype=np.float64)
    if cache is None or gamma == 1.0 or len(neighbors) == 0:
        return weights
    weights[cache.is_cached(neighbors)] = gamma
    return weights


def sample_khop(g: Graph, seeds: Sequence[int], cfg: SamplerConfig, cache: Optional[CacheState] = None,
                salt: Sequence[int] = (), key_hook: Optional[KeyHook] = None) -> SampleBatch:
    seeds = np.asarray(seeds, dtype=np.int64)
    if seeds.size == 0:
        raise ParameterError("seed list must not be empty")
    if seeds.min() < 0 or seeds.max() >= g.num_nodes:
        raise ParameterError(f"seed outside [0, {g.num_nodes})")
    streams = SamplerRNG(cfg.rng_seed)

    position: Dict[int, int] = {}
    unique: List[int] = []
    duplicates = 0
    for s in seeds.tolist():
        if s in position:
            duplicates += 1
        else:
            position[s] = len(unique)
            unique.append(s)

    frontier = list(unique)
    layers = []
    for layer, fanout in enumerate(cfg.fanouts):
        edges: List[tuple] = []
        next_frontier: List[int] = []
        queued = set()
        key = streams.layer_key(salt, layer)
        for v in frontier:
            nbrs = g.neighbors(v)
            if nbrs.shape[0] == 0:
                continue
            rng = streams.stream(key, v)
            if cfg.strategy == SamplingStrategy.UNIFORM:
                picked = uniform_reservoir_sample(nbrs, fanout, rng)
            else:
                weights = assign_weights(nbrs, cache, cfg.bias_rate)
                picked = weighted_reservoir_sample(nbrs, weights, fanout, rng, key_hook)
            dst = position[v]
            for src in picked:
                src = int(src)
                if src in position:
                    duplicates += 1
                else:
                    position[src] = len(unique)
                    unique.append(src)
                edges.append((dst, position[src]))
                if src not in queued:
                    queued.add(src)
                    next_frontier.append(src)
        layers.append(np.asarray(edges, dtype=np.int64).reshape(-1, 2))
        frontier = next_frontier

    return SampleBatch(layers=layers, unique_nodes=np.asarray(unique, dtype=np.int64),
                       seeds=seeds, num_duplicates_removed=duplicates)


def validate_batch(g: Graph, batch: SampleBatch) -> None:
    nodes = batch.unique_nodes
    if np.unique(nodes).shape[0] != nodes.shape[0]:
        raise GraphFormatError("unique_nodes contains repeats")
    if not np.all(np.isin(batch.seeds, nodes)):
        raise GraphFormatError("seeds missing from unique_nodes")
    for layer in batch.layers:
        for dst, src in layer.tolist():
            if not g.has_edge(int(nodes[dst]), int(nodes[src])):
                raise GraphFormatError(f"sampled edge {nodes[dst]}->{nodes[src]} not in graph")


def dedup_ratio(b: SampleBatch) -> float:
    total = b.num_duplicates_removed + b.unique_nodes.shape[0]
    return b.num_duplicates_removed / total if total else 0.0


@dataclass(frozen=True)
class BiasSweepPoint:
    bias_rate: float
    hit_rate: float
    dedup_ratio: float
    cached_fraction: float


def bias_sweep(g: Graph, cache: CacheState, fanouts: Sequence[int], gammas: Sequence[float],
               epochs: int, batch_size: int, seed: int) -> List[BiasSweepPoint]:
    """Mean hit rate and dedup ratio per bias rate; every rate sees the same seeds and uniforms"""
    train_nodes = np.flatnonzero(g.train_mask)
    if train_nodes.size == 0:
        raise ParameterError("bias sweep needs train nodes")
    results = []
    for gamma in gammas:
        cfg = SamplerConfig(fanouts=list(fanouts), bias_rate=gamma, rng_seed=seed)
        acc = CacheAccounting(cache.num_devices)
        ratios, cached = [], []
        for epoch in range(epochs):
            order = np.random.default_rng([seed, epoch]).permutation(train_nodes)
            for it, start in enumerate(range(0, order.shape[0], batch_size)):
                batch = sample_khop(g, order[start:start + batch_size], cfg, cache, salt=(epoch, it))
                devices = lookup(cache, batch.unique_nodes, acc)
                ratios.append(dedup_ratio(batch))
                cached.append(float(np.mean(devices >= 0)))
        point = BiasSweepPoint(bias_rate=gamma, hit_rate=hit_rate(acc),
                               dedup_ratio=float(np.mean(ratios)), cached_fraction=float(np.mean(cached)))
        logger.info(f"bias sweep gamma={gamma}: hit_rate={point.hit_rate:.4f} dedup={point.dedup_ratio:.4f}")
        results.append(point)
    return results
