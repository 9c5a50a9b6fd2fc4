"""CSR graphs, synthetic generators, statistics and partitioning"""
import logging
import struct
from collections import deque
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from ..exceptions import GraphFormatError, ParameterError, ReindexError
from ..models import GraphGenerator, GraphSource, GraphStats, PartitionMethod, PartitionStats

logger = logging.getLogger("gnn_autotune.graph")

MAGIC = b"A3G1"
_HEADER = struct.Struct("<4sQQI")
MASK_TRAIN = 1
MASK_TEST = 2


@dataclass(frozen=True, eq=False)
class Graph:
    row_offsets: np.ndarray
    col_indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    test_mask: np.ndarray

    @property
    def num_nodes(self) -> int:
        return int(self.row_offsets.shape[0] - 1)

    @property
    def num_edges(self) -> int:
        return int(self.col_indices.shape[0])

    @property
    def feat_dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def out_degrees(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def neighbors(self, v: int) -> np.ndarray:
        return self.col_indices[self.row_offsets[v]:self.row_offsets[v + 1]]

    def has_edge(self, src: int, dst: int) -> bool:
        nbrs = self.neighbors(src)
        pos = np.searchsorted(nbrs, dst)
        return bool(pos < nbrs.shape[0] and nbrs[pos] == dst)

    def adjacency(self) -> sp.csr_matrix:
        n = self.num_nodes
        data = np.ones(self.num_edges, dtype=np.float32)
        return sp.csr_matrix((data, self.col_indices, self.row_offsets), shape=(n, n))

    def edge_list(self) -> Tuple[np.ndarray, np.ndarray]:
        src = np.repeat(np.arange(self.num_nodes, dtype=np.int64), self.out_degrees)
        return src, self.col_indices.copy()


@dataclass(frozen=True, eq=False)
class Partition:
    partition_id: int
    core_nodes: np.ndarray
    halo_nodes: np.ndarray
    local_graph: Graph
    global_ids: np.ndarray  # local id -> global id
    global_to_local: np.ndarray = field(repr=False)  # global id -> local id, -1 when absent

    @property
    def num_global_nodes(self) -> int:
        return int(self.global_to_local.shape[0])

    @property
    def eta(self) -> float:
        return self.global_ids.shape[0] / self.num_global_nodes

    @property
    def local_core(self) -> np.ndarray:
        return np.arange(self.core_nodes.shape[0], dtype=np.int64)

    def inverse(self, local_ids: Sequence[int]) -> np.ndarray:
        ids = np.asarray(local_ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.global_ids.shape[0]):
            raise ReindexError(f"local id outside partition {self.partition_id}")
        return self.global_ids[ids]


def validate_graph(g: Graph) -> None:
    ro, ci = g.row_offsets, g.col_indices
    n = ro.shape[0] - 1
    if n < 0:
        raise GraphFormatError("row_offsets must have at least one entry")
    if ro[0] != 0:
        raise GraphFormatError("row_offsets[0] must be 0")
    if np.any(np.diff(ro) < 0):
        raise GraphFormatError("row_offsets must be non-decreasing")
    if ro[-1] != ci.shape[0]:
        raise GraphFormatError(f"row_offsets[last]={ro[-1]} but {ci.shape[0]} column indices")
    if ci.size and (ci.min() < 0 or ci.max() >= n):
        raise GraphFormatError("column index out of range")
    if g.features.ndim != 2 or g.features.shape[0] != n or g.features.shape[1] < 1:
        raise GraphFormatError(f"features must be {n} x feat_dim with feat_dim >= 1")
    for name in ("labels", "train_mask", "test_mask"):
        if getattr(g, name).shape != (n,):
            raise GraphFormatError(f"{name} must have one entry per node")


def _csr_from_edges(src: np.ndarray, dst: np.ndarray, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Self-loops dropped, duplicates collapsed, neighbors sorted"""
    keep = src != dst
    src, dst = src[keep], dst[keep]
    adj = sp.coo_matrix((np.ones(src.shape[0], dtype=np.int8), (src, dst)), shape=(n, n)).tocsr()
    adj.sum_duplicates()
    adj.sort_indices()
    return adj.indptr.astype(np.int64), adj.indices.astype(np.int64)


def split_masks(n: int, train_fraction: float = 0.6, seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    cut = int(round(n * train_fraction))
    train = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    train[order[:cut]] = True
    test[order[cut:]] = True
    return train, test


def _synthetic_features(labels: np.ndarray, feat_dim: int, rng: np.random.Generator) -> np.ndarray:
    num_classes = int(labels.max()) + 1 if labels.size else 0
    if num_classes > feat_dim:
        raise ParameterError(f"feat_dim={feat_dim} cannot one-hot encode {num_classes} classes")
    feats = rng.standard_normal((labels.shape[0], feat_dim))
    feats[np.arange(labels.shape[0]), labels] += 1.0
    return feats.astype(np.float32)


def _assemble(src, dst, labels, feat_dim, rng, seed) -> Graph:
    n = labels.shape[0]
    row_offsets, col_indices = _csr_from_edges(src, dst, n)
    features = _synthetic_features(labels, feat_dim, rng)
    train, test = split_masks(n, seed=seed)
    g = Graph(row_offsets, col_indices, features, labels, train, test)
    validate_graph(g)
    return g


def generate_sbm(n_nodes: int, n_blocks: int, p_in: float, p_out: float,
                 feat_dim: int, seed: int) -> Graph:
    """Symmetric stochastic block model; node i belongs to block i % n_blocks"""
    if n_blocks < 1 or n_blocks > n_nodes:
        raise ParameterError(f"n_blocks must lie in [1, n_nodes], got {n_blocks}")
    if not (0.0 <= p_out < p_in <= 1.0):
        raise ParameterError(f"need 0 <= p_out < p_in <= 1, got p_in={p_in} p_out={p_out}")
    rng = np.random.default_rng(seed)
    labels = np.arange(n_nodes, dtype=np.int64) % n_blocks
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, p_in, p_out)
    draws = rng.random((n_nodes, n_nodes))
    upper = np.triu(draws < prob, k=1)
    i, j = np.nonzero(upper)
    src = np.concatenate([i, j]).astype(np.int64)
    dst = np.concatenate([j, i]).astype(np.int64)
    g = _assemble(src, dst, labels, feat_dim, rng, seed)
    logger.debug(f"SBM n={n_nodes} blocks={n_blocks} edges={g.num_edges}")
    return g


def expected_sbm_density(n_nodes: int, n_blocks: int, p_in: float, p_out: float) -> float:
    sizes = np.bincount(np.arange(n_nodes) % n_blocks, minlength=n_blocks)
    intra = float(np.sum(sizes * (sizes - 1)))
    total = float(n_nodes * (n_nodes - 1))
    return (p_in * intra + p_out * (total - intra)) / total


def generate_power_law(n_nodes: int, min_degree: int, exponent: float, feat_dim: int,
                       seed: int, num_classes: int = 3) -> Graph:
    """Directed graph whose out-degrees follow a power law truncated at n_nodes - 1.

    Targets are drawn without replacement with probability proportional to the
    target's own degree, so in-degree tracks out-degree.
    """
    if exponent <= 1.0:
        raise ParameterError(f"exponent must be > 1, got {exponent}")
    if min_degree < 1:
        raise ParameterError(f"min_degree must be >= 1, got {min_degree}")
    if n_nodes < 2:
        raise ParameterError("power-law graph needs at least two nodes")
    rng = np.random.default_rng(seed)
    u = 1.0 - rng.random(n_nodes)
    degrees = np.floor(min_degree * u ** (-1.0 / (exponent - 1.0))).astype(np.int64)
    degrees = np.clip(degrees, min(min_degree, n_nodes - 1), n_nodes - 1)
    weights = degrees.astype(np.float64)
    src_parts, dst_parts = [], []
    for v in range(n_nodes):
        p = weights.copy()
        p[v] = 0.0
        p /= p.sum()
        targets = rng.choice(n_nodes, size=int(degrees[v]), replace=False, p=p)
        src_parts.append(np.full(targets.shape[0], v, dtype=np.int64))
        dst_parts.append(targets.astype(np.int64))
    labels = np.arange(n_nodes, dtype=np.int64) % num_classes
    return _assemble(np.concatenate(src_parts), np.concatenate(dst_parts), labels, feat_dim, rng, seed)


def load_edge_list(path: str, feat_dim: int, num_classes: int = 3, seed: int = 0) -> Graph:
    """Text "src dst" pairs, symmetrised; '#' starts a comment"""
    src, dst = [], []
    try:
        with open(path, "r") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 2:
                    raise GraphFormatError(f"{path}:{lineno}: expected 'src dst', got {line!r}")
                try:
                    a, b = int(parts[0]), int(parts[1])
                except ValueError:
                    raise GraphFormatError(f"{path}:{lineno}: node ids must be integers")
                if a < 0 or b < 0:
                    raise GraphFormatError(f"{path}:{lineno}: node ids must be non-negative")
                src.append(a)
                dst.append(b)
    except OSError as e:
        raise GraphFormatError(f"cannot read edge list {path}: {e}")
    n = max(max(src, default=-1), max(dst, default=-1)) + 1
    if n == 0:
        raise GraphFormatError(f"{path}: no edges")
    s = np.asarray(src, dtype=np.int64)
    d = np.asarray(dst, dtype=np.int64)
    labels = np.arange(n, dtype=np.int64) % num_classes
    rng = np.random.default_rng(seed)
    return _assemble(np.concatenate([s, d]), np.concatenate([d, s]), labels, feat_dim, rng, seed)


def save_graph(g: Graph, path: str) -> None:
    validate_graph(g)
    masks = (g.train_mask.astype(np.uint8) * MASK_TRAIN) | (g.test_mask.astype(np.uint8) * MASK_TEST)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, g.num_nodes, g.num_edges, g.feat_dim))
        fh.write(g.row_offsets.astype("<u8").tobytes())
        fh.write(g.col_indices.astype("<u4").tobytes())
        fh.write(g.features.astype("<f4").tobytes())
        fh.write(g.labels.astype("<u4").tobytes())
        fh.write(masks.astype(np.uint8).tobytes())


def load_graph(path: str) -> Graph:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise GraphFormatError(f"{path}: truncated header")
    magic, n, m, feat_dim = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise GraphFormatError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 8 * (n + 1) + 4 * m + 4 * n * feat_dim + 4 * n + n
    if len(blob) != expected:
        raise GraphFormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    offset = _HEADER.size

    def take(dtype: str, count: int) -> np.ndarray:
        nonlocal offset
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
        offset += arr.nbytes
        return arr

    row_offsets = take("<u8", n + 1).astype(np.int64)
    col_indices = take("<u4", m).astype(np.int64)
    features = take("<f4", n * feat_dim).reshape(n, feat_dim).astype(np.float32)
    labels = take("<u4", n).astype(np.int64)
    masks = take("u1", n)
    g = Graph(row_offsets, col_indices, features, labels,
              (masks & MASK_TRAIN).astype(bool), (masks & MASK_TEST).astype(bool))
    validate_graph(g)
    return g


def build_graph(source: GraphSource, seed: int) -> Graph:
    if source.generator == GraphGenerator.SBM:
        return generate_sbm(source.n_nodes, source.n_blocks, source.p_in, source.p_out,
                            source.feat_dim, seed)
    if source.generator == GraphGenerator.POWER_LAW:
        return generate_power_law(source.n_nodes, source.min_degree, source.exponent,
                                  source.feat_dim, seed, num_classes=source.num_classes)
    if source.generator == GraphGenerator.EDGE_LIST:
        return load_edge_list(source.path, source.feat_dim, source.num_classes, seed)
    return load_graph(source.path)


def graph_stats(g: Graph) -> GraphStats:
    n, m = g.num_nodes, g.num_edges
    density = m / (n * (n - 1)) if n > 1 else 0.0
    degrees = g.out_degrees
    return GraphStats(
        num_nodes=n,
        num_edges=m,
        density=density,
        degree_mean=float(degrees.mean()) if n else 0.0,
        degree_max=float(degrees.max()) if n else 0.0,
    )


def _hash_cores(g: Graph, u: int) -> List[np.ndarray]:
    ids = np.arange(g.num_nodes, dtype=np.int64)
    return [ids[ids % u == i] for i in range(u)]


def _bfs_cores(g: Graph, u: int) -> List[np.ndarray]:
    n = g.num_nodes
    targets = [n // u + (1 if i < n % u else 0) for i in range(u)]
    owner = np.full(n, -1, dtype=np.int64)
    next_seed = 0
    for part, target in enumerate(targets):
        filled = 0
        frontier: deque = deque()
        while filled < target:
            if not frontier:
                while owner[next_seed] >= 0:
                    next_seed += 1
                frontier.append(next_seed)
                owner[next_seed] = part
                filled += 1
                continue
            v = frontier.popleft()
            for w in g.neighbors(v):
                if filled >= target:
                    break
                if owner[w] < 0:
                    owner[w] = part
                    filled += 1
                    frontier.append(int(w))
    return [np.flatnonzero(owner == i).astype(np.int64) for i in range(u)]


def _induced(g: Graph, ids: np.ndarray) -> Graph:
    adj = g.adjacency()[ids][:, ids].tocsr()
    adj.sort_indices()
    sub = Graph(
        row_offsets=adj.indptr.astype(np.int64),
        col_indices=adj.indices.astype(np.int64),
        features=g.features[ids],
        labels=g.labels[ids],
        train_mask=g.train_mask[ids],
        test_mask=g.test_mask[ids],
    )
    validate_graph(sub)
    return sub


def partition_graph(g: Graph, u: int,
                    method: PartitionMethod = PartitionMethod.HASH) -> Tuple[List[Partition], List[PartitionStats]]:
    if u < 1 or u > g.num_nodes:
        raise ParameterError(f"u must lie in [1, {g.num_nodes}], got {u}")
    if u == 1:
        ids = np.arange(g.num_nodes, dtype=np.int64)
        part = Partition(0, ids, np.empty(0, dtype=np.int64), g, ids, ids.copy())
        return [part], partition_stats([part])

    cores = _hash_cores(g, u) if method == PartitionMethod.HASH else _bfs_cores(g, u)
    partitions = []
    for pid, core in enumerate(cores):
        in_core = np.zeros(g.num_nodes, dtype=bool)
        in_core[core] = True
        reached = np.concatenate([g.neighbors(v) for v in core]) if core.size else np.empty(0, np.int64)
        halo = np.unique(reached[~in_core[reached]]).astype(np.int64)
        global_ids = np.concatenate([core, halo])
        global_to_local = np.full(g.num_nodes, -1, dtype=np.int64)
        global_to_local[global_ids] = np.arange(global_ids.shape[0])
        part = Partition(pid, core, halo, _induced(g, global_ids), global_ids, global_to_local)
        partitions.append(part)
    stats = partition_stats(partitions)
    logger.debug(f"partitioned into {u} ({method.value}); etas={[round(s.eta, 3) for s in stats]}")
    return partitions, stats


def partition_stats(partitions: Sequence[Partition]) -> List[PartitionStats]:
    return [PartitionStats(partition_id=p.partition_id, eta=p.eta, core_size=int(p.core_nodes.shape[0]),
                           halo_size=int(p.halo_nodes.shape[0])) for p in partitions]


def mean_eta(stats: Sequence[PartitionStats]) -> float:
    return float(np.mean([s.eta for s in stats])) if stats else 1.0


def reindex(global_ids: Sequence[int], p: Partition) -> np.ndarray:
    ids = np.asarray(global_ids, dtype=np.int64)
    if ids.size == 0:
        return ids
    if ids.min() < 0 or ids.max() >= p.num_global_nodes:
        raise ReindexError(f"global id outside graph while reindexing into partition {p.partition_id}")
    local = p.global_to_local[ids]
    if np.any(local < 0):
        missing = ids[local < 0][:5].tolist()
        raise ReindexError(f"ids {missing} not in partition {p.partition_id}")
    return local

