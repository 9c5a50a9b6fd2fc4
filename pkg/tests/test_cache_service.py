import numpy as np
import pytest

from src.exceptions import UndefinedRateError
from src.models import CacheConfig, SamplerConfig
from src.services import csv_io
from src.services.cache_service import (
    UNCACHED,
    CacheAccounting,
    build_static_cache,
    cache_for_fraction,
    hit_rate,
    localize_cache,
    lookup,
    retrieve_features,
    write_cache_manifest,
)
from src.services.graph_service import partition_graph
from src.services.sampler_service import sample_khop
from tests.conftest import make_graph


@pytest.fixture
def skewed_graph():
    # out-degrees: node 0 -> 4, node 1 -> 3, node 2 -> 3, node 3 -> 1, nodes 4, 5 -> 0
    edges = [(0, 1), (0, 2), (0, 3), (0, 4),
             (1, 0), (1, 2), (1, 5),
             (2, 0), (2, 1), (2, 3),
             (3, 0)]
    return make_graph(edges, 6, feat_dim=4)


def test_zero_volume_caches_nothing(skewed_graph):
    cache = build_static_cache(skewed_graph, CacheConfig(volume_bytes=0))
    assert cache.num_cached == 0
    assert np.all(cache.device_map == UNCACHED)


def test_capacity_picks_hottest_nodes_with_low_id_tiebreak(skewed_graph):
    # 16 bytes per node, 40 bytes -> two slots
    cache = build_static_cache(skewed_graph, CacheConfig(volume_bytes=40))
    assert cache.num_cached == 2
    assert cache.is_cached([0, 1, 2]).tolist() == [True, True, False]
    assert cache.bytes_used == [32]
    assert cache.bytes_used[0] <= cache.volume_bytes


def test_devices_are_filled_round_robin(skewed_graph):
    cache = build_static_cache(skewed_graph, CacheConfig(volume_bytes=32, num_devices=2))
    assert cache.device_map[:4].tolist() == [0, 1, 0, 1]
    assert [p.tolist() for p in cache.cached_per_device] == [[0, 2], [1, 3]]
    assert all(b <= 32 for b in cache.bytes_used)


def test_cache_larger_than_graph_holds_everything(skewed_graph):
    cache = build_static_cache(skewed_graph, CacheConfig(volume_bytes=1 << 20))
    assert cache.num_cached == skewed_graph.num_nodes


def test_cache_for_fraction(power_law_graph):
    cache = cache_for_fraction(power_law_graph, 0.1)
    assert cache.num_cached == 40
    hottest = np.sort(power_law_graph.out_degrees)[::-1][:40]
    assert power_law_graph.out_degrees[cache.device_map != UNCACHED].min() >= hottest[-1]


def test_hit_rate_undefined_without_lookups():
    with pytest.raises(UndefinedRateError):
        hit_rate(CacheAccounting())


def test_lookup_accounting(skewed_graph):
    cache = build_static_cache(skewed_graph, CacheConfig(volume_bytes=32, num_devices=2))
    acc = CacheAccounting(2)
    devices = lookup(cache, [0, 1, 4, 5, 0], acc)
    assert devices.tolist() == [0, 1, UNCACHED, UNCACHED, 0]
    assert (acc.hits, acc.misses) == (3, 2)
    assert acc.device_hits == [2, 1]
    assert hit_rate(acc) == pytest.approx(0.6)


def test_retrieve_features_counts_bytes(sbm_graph):
    cache = cache_for_fraction(sbm_graph, 0.25)
    batch = sample_khop(sbm_graph, [0, 1, 2, 3], SamplerConfig(fanouts=[4, 2]), cache)
    acc = CacheAccounting()
    feats, stats = retrieve_features(batch, cache, sbm_graph, acc)
    n = batch.unique_nodes.shape[0]
    np.testing.assert_array_equal(feats, sbm_graph.features[batch.unique_nodes])
    assert stats.num_nodes == n
    assert stats.num_edges == batch.num_edges
    assert stats.batch_bytes == n * sbm_graph.feat_dim * 4 + batch.num_edges * 8
    assert acc.total == n


def test_localized_cache_follows_partition_ids(sbm_graph):
    cache = cache_for_fraction(sbm_graph, 0.2)
    parts, _ = partition_graph(sbm_graph, 2)
    for part in parts:
        local = localize_cache(cache, part)
        assert local.device_map.shape[0] == part.global_ids.shape[0]
        np.testing.assert_array_equal(local.is_cached(np.arange(part.global_ids.shape[0])),
                                      cache.is_cached(part.global_ids))


def test_manifest_lists_cached_nodes(tmp_path, skewed_graph):
    cache = build_static_cache(skewed_graph, CacheConfig(volume_bytes=32, num_devices=2))
    path = tmp_path / "cache_manifest.csv"
    assert write_cache_manifest(cache, str(path)) == 4
    rows = csv_io.read_rows(str(path), csv_io.CACHE_MANIFEST_COLUMNS)
    assert [(int(r["node_id"]), int(r["device_id"])) for r in rows] == [(0, 0), (1, 1), (2, 0), (3, 1)]
