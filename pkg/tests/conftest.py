import numpy as np
import pytest

from src.models import DesignSpace, ParallelMode, SamplingDevice
from src.services.graph_service import Graph, generate_power_law, generate_sbm


@pytest.fixture(scope="session")
def sbm_graph() -> Graph:
    return generate_sbm(120, 3, 0.3, 0.01, 16, seed=0)


@pytest.fixture(scope="session")
def power_law_graph() -> Graph:
    return generate_power_law(400, 2, 2.5, 16, seed=1)


@pytest.fixture
def planted_space() -> DesignSpace:
    """3 knobs x 4 levels, every other knob fixed"""
    return DesignSpace(
        batch_size=[64, 128, 256, 512],
        partitions=[1],
        bias_rate=[1.0, 2.0, 4.0, 8.0],
        sampling_device=[SamplingDevice.CPU],
        workers=[1, 2, 4, 8],
        cache_volume=[0],
        mode=[ParallelMode.MODE1],
    )


def make_graph(edges, n, feat_dim=4, num_classes=2, seed=0) -> Graph:
    """Directed graph from explicit (src, dst) pairs"""
    from src.services.graph_service import _csr_from_edges, split_masks

    src = np.asarray([e[0] for e in edges], dtype=np.int64)
    dst = np.asarray([e[1] for e in edges], dtype=np.int64)
    row_offsets, col_indices = _csr_from_edges(src, dst, n)
    rng = np.random.default_rng(seed)
    labels = np.arange(n, dtype=np.int64) % num_classes
    features = rng.standard_normal((n, feat_dim)).astype(np.float32)
    train, test = split_masks(n, seed=seed)
    return Graph(row_offsets, col_indices, features, labels, train, test)
