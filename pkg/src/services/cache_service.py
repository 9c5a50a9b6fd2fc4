"""Static out-degree hotness feature cache with device map and hit accounting"""
import logging
import threading
from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Sequence, Tuple

import numpy as np

from ..exceptions import UndefinedRateError
from ..models import BYTES_PER_VALUE, BatchStats, CacheConfig
from . import csv_io
from .graph_service import Graph, Partition

if TYPE_CHECKING:
    from .sampler_service import SampleBatch

logger = logging.getLogger("gnn_autotune.cache")

UNCACHED = -1


@dataclass(frozen=True, eq=False)
class CacheState:
    device_map: np.ndarray  # node id -> device id, UNCACHED when absent
    cached_per_device: List[np.ndarray]
    bytes_used: List[int]
    volume_bytes: int
    node_bytes: int

    @classmethod
    def empty(cls, num_nodes: int, num_devices: int = 1, node_bytes: int = 0) -> "CacheState":
        return cls(
            device_map=np.full(num_nodes, UNCACHED, dtype=np.int64),
            cached_per_device=[np.empty(0, dtype=np.int64) for _ in range(num_devices)],
            bytes_used=[0] * num_devices,
            volume_bytes=0,
            node_bytes=node_bytes,
        )

    @property
    def num_devices(self) -> int:
        return len(self.cached_per_device)

    @property
    def num_cached(self) -> int:
        return int(np.count_nonzero(self.device_map != UNCACHED))

    def is_cached(self, ids: Sequence[int]) -> np.ndarray:
        return self.device_map[np.asarray(ids, dtype=np.int64)] != UNCACHED


class CacheAccounting:
    """Hit/miss counters shared by concurrent samplers and retrievers"""

    def __init__(self, num_devices: int = 1):
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        self.device_hits = [0] * num_devices

    @property
    def total(self) -> int:
        return self.hits + self.misses

    def record(self, devices: np.ndarray) -> None:
        hit = devices != UNCACHED
        n_hits = int(np.count_nonzero(hit))
        per_device = np.bincount(devices[hit], minlength=len(self.device_hits)) if n_hits else None
        with self._lock:
            self.hits += n_hits
            self.misses += int(devices.shape[0]) - n_hits
            if per_device is not None:
                if per_device.shape[0] > len(self.device_hits):
                    self.device_hits.extend([0] * (per_device.shape[0] - len(self.device_hits)))
                for d, count in enumerate(per_device):
                    self.device_hits[d] += int(count)


def node_feature_bytes(feat_dim: int) -> int:
    return feat_dim * BYTES_PER_VALUE


def build_static_cache(g: Graph, cfg: CacheConfig) -> CacheState:
    """Hottest nodes by out-degree (ties: lower id), dealt round-robin across devices"""
    node_bytes = node_feature_bytes(g.feat_dim)
    capacity = cfg.volume_bytes // node_bytes
    n = g.num_nodes
    if capacity == 0 or n == 0:
        return CacheState.empty(n, cfg.num_devices, node_bytes)
    ids = np.arange(n, dtype=np.int64)
    order = np.lexsort((ids, -g.out_degrees))
    chosen = order[:min(n, capacity * cfg.num_devices)]
    devices = np.arange(chosen.shape[0], dtype=np.int64) % cfg.num_devices
    device_map = np.full(n, UNCACHED, dtype=np.int64)
    device_map[chosen] = devices
    per_device = [chosen[devices == d] for d in range(cfg.num_devices)]
    state = CacheState(
        device_map=device_map,
        cached_per_device=per_device,
        bytes_used=[int(p.shape[0]) * node_bytes for p in per_device],
        volume_bytes=cfg.volume_bytes,
        node_bytes=node_bytes,
    )
    logger.debug(f"cached {state.num_cached}/{n} nodes over {cfg.num_devices} device(s)")
    return state


def cache_for_fraction(g: Graph, fraction: float, num_devices: int = 1) -> CacheState:
    """Cache sized to hold `fraction` of all nodes across the devices"""
    node_bytes = node_feature_bytes(g.feat_dim)
    slots = int(round(fraction * g.num_nodes))
    per_device = -(-slots // num_devices)
    return build_static_cache(g, CacheConfig(volume_bytes=per_device * node_bytes, num_devices=num_devices))


def localize_cache(cache: CacheState, partition: Partition) -> CacheState:
    """Device map re-indexed to the partition's local ids"""
    local_map = cache.device_map[partition.global_ids]
    per_device = [np.flatnonzero(local_map == d).astype(np.int64) for d in range(cache.num_devices)]
    return CacheState(
        device_map=local_map,
        cached_per_device=per_device,
        bytes_used=list(cache.bytes_used),
        volume_bytes=cache.volume_bytes,
        node_bytes=cache.node_bytes,
    )


def lookup(c: CacheState, ids: Sequence[int], acc: CacheAccounting) -> np.ndarray:
    devices = c.device_map[np.asarray(ids, dtype=np.int64)]
    acc.record(devices)
    return devices


def batch_bytes(num_nodes: int, num_edges: int, feat_dim: int) -> int:
    return num_nodes * feat_dim * BYTES_PER_VALUE + num_edges * 2 * BYTES_PER_VALUE


def retrieve_features(b: "SampleBatch", c: CacheState, g: Graph,
                      acc: CacheAccounting) -> Tuple[np.ndarray, BatchStats]:
    lookup(c, b.unique_nodes, acc)
    feats = g.features[b.unique_nodes]
    stats = BatchStats(
        batch_bytes=batch_bytes(int(b.unique_nodes.shape[0]), b.num_edges, g.feat_dim),
        num_nodes=int(b.unique_nodes.shape[0]),
        num_edges=b.num_edges,
    )
    return feats, stats


def hit_rate(acc: CacheAccounting) -> float:
    if acc.total == 0:
        raise UndefinedRateError("hit rate undefined with zero lookups")
    return acc.hits / acc.total


def write_cache_manifest(cache: CacheState, path: str) -> int:
    cached = np.flatnonzero(cache.device_map != UNCACHED)
    rows = [(int(v), int(cache.device_map[v])) for v in cached]
    csv_io.write_rows(path, csv_io.CACHE_MANIFEST_COLUMNS, rows)
    return len(rows)
