import numpy as np
import pytest

from src.exceptions import GraphFormatError, ParameterError, ReindexError
from src.models import GraphGenerator, GraphSource, PartitionMethod
from src.services.graph_service import (
    build_graph,
    expected_sbm_density,
    generate_power_law,
    generate_sbm,
    graph_stats,
    load_edge_list,
    load_graph,
    mean_eta,
    partition_graph,
    partition_stats,
    reindex,
    save_graph,
    validate_graph,
)


def test_sbm_is_symmetric_without_self_loops(sbm_graph):
    src, dst = sbm_graph.edge_list()
    assert not np.any(src == dst)
    for a, b in list(zip(src.tolist(), dst.tolist()))[:200]:
        assert sbm_graph.has_edge(b, a)


def test_sbm_density_close_to_expected():
    g = generate_sbm(300, 3, 0.3, 0.01, 16, seed=3)
    expected = expected_sbm_density(300, 3, 0.3, 0.01)
    assert graph_stats(g).density == pytest.approx(expected, rel=0.1)


def test_sbm_rejects_bad_probabilities():
    with pytest.raises(ParameterError):
        generate_sbm(30, 3, 0.1, 0.2, 8, seed=0)


def test_power_law_degrees_are_bounded(power_law_graph):
    degrees = power_law_graph.out_degrees
    assert degrees.min() >= 2
    assert degrees.max() <= power_law_graph.num_nodes - 1
    src, dst = power_law_graph.edge_list()
    assert not np.any(src == dst)
    # heavy tail: the hottest node is far above the mean
    assert degrees.max() > 4 * degrees.mean()


def test_save_load_round_trip(tmp_path, sbm_graph):
    path = tmp_path / "g.bin"
    save_graph(sbm_graph, str(path))
    loaded = load_graph(str(path))
    np.testing.assert_array_equal(loaded.row_offsets, sbm_graph.row_offsets)
    np.testing.assert_array_equal(loaded.col_indices, sbm_graph.col_indices)
    np.testing.assert_array_equal(loaded.features, sbm_graph.features)
    np.testing.assert_array_equal(loaded.labels, sbm_graph.labels)
    np.testing.assert_array_equal(loaded.train_mask, sbm_graph.train_mask)
    np.testing.assert_array_equal(loaded.test_mask, sbm_graph.test_mask)
    assert graph_stats(loaded) == graph_stats(sbm_graph)


def test_load_rejects_bad_magic_and_truncation(tmp_path, sbm_graph):
    path = tmp_path / "g.bin"
    save_graph(sbm_graph, str(path))
    blob = path.read_bytes()
    (tmp_path / "magic.bin").write_bytes(b"XXXX" + blob[4:])
    (tmp_path / "short.bin").write_bytes(blob[:-3])
    with pytest.raises(GraphFormatError):
        load_graph(str(tmp_path / "magic.bin"))
    with pytest.raises(GraphFormatError):
        load_graph(str(tmp_path / "short.bin"))


def test_edge_list_is_symmetrised(tmp_path):
    path = tmp_path / "edges.txt"
    path.write_text("# tiny path\n0 1\n1 2\n\n2 2\n")
    g = load_edge_list(str(path), feat_dim=4)
    assert g.num_nodes == 3
    assert g.num_edges == 4
    assert g.has_edge(1, 0) and g.has_edge(2, 1)
    assert not g.has_edge(2, 2)


def test_edge_list_reports_bad_lines(tmp_path):
    path = tmp_path / "edges.txt"
    path.write_text("0 1\n1 x\n")
    with pytest.raises(GraphFormatError, match=":2:"):
        load_edge_list(str(path), feat_dim=4)


def test_build_graph_from_file_source(tmp_path, sbm_graph):
    path = tmp_path / "g.bin"
    save_graph(sbm_graph, str(path))
    g = build_graph(GraphSource(generator=GraphGenerator.FILE, path=str(path)), seed=0)
    assert g.num_edges == sbm_graph.num_edges


def test_validate_graph_catches_out_of_range_columns(sbm_graph):
    bad = type(sbm_graph)(sbm_graph.row_offsets, sbm_graph.col_indices + sbm_graph.num_nodes,
                          sbm_graph.features, sbm_graph.labels, sbm_graph.train_mask, sbm_graph.test_mask)
    with pytest.raises(GraphFormatError):
        validate_graph(bad)


def test_single_partition_is_the_whole_graph(sbm_graph):
    parts, stats = partition_graph(sbm_graph, 1)
    assert len(parts) == 1
    assert stats[0].eta == 1.0
    assert parts[0].local_graph is sbm_graph


@pytest.mark.parametrize("method", list(PartitionMethod))
def test_partitions_cover_nodes_and_keep_induced_edges(sbm_graph, method):
    parts, stats = partition_graph(sbm_graph, 3, method)
    cores = np.concatenate([p.core_nodes for p in parts])
    assert np.array_equal(np.sort(cores), np.arange(sbm_graph.num_nodes))
    for part, s in zip(parts, stats):
        members = part.global_ids
        assert 0.0 < s.eta <= 1.0
        assert s.eta == pytest.approx(members.shape[0] / sbm_graph.num_nodes)
        local = part.local_graph
        induced = sum(int(np.isin(sbm_graph.neighbors(v), members).sum()) for v in members)
        assert local.num_edges == induced
        src, dst = local.edge_list()
        for a, b in list(zip(src.tolist(), dst.tolist()))[:100]:
            assert sbm_graph.has_edge(int(members[a]), int(members[b]))
    assert mean_eta(stats) == pytest.approx(np.mean([s.eta for s in stats]))


def test_bfs_partition_sizes_are_balanced(sbm_graph):
    parts, _ = partition_graph(sbm_graph, 4, PartitionMethod.BFS_BALANCED)
    sizes = [p.core_nodes.shape[0] for p in parts]
    assert max(sizes) - min(sizes) <= 1


def test_partition_count_out_of_range(sbm_graph):
    with pytest.raises(ParameterError):
        partition_graph(sbm_graph, 0)
    with pytest.raises(ParameterError):
        partition_graph(sbm_graph, sbm_graph.num_nodes + 1)


def test_reindex_round_trip_and_missing_ids():
    g = generate_sbm(40, 2, 0.5, 0.0, 4, seed=0)
    parts, _ = partition_graph(g, 2)
    part = parts[0]
    local = reindex(part.core_nodes, part)
    np.testing.assert_array_equal(part.inverse(local), part.core_nodes)
    # blocks are disconnected, so odd nodes never reach partition 0
    with pytest.raises(ReindexError):
        reindex([1], part)


def test_sbm_extremes_give_disjoint_cliques():
    g = generate_sbm(4, 2, 1.0, 0.0, 4, seed=0)
    assert graph_stats(g).density == pytest.approx(4 / 12)
    parts, stats = partition_graph(g, 2, PartitionMethod.HASH)
    assert [s.core_size for s in stats] == [2, 2]
    assert [s.halo_size for s in stats] == [0, 0]
    assert all(p.halo_nodes.size == 0 for p in parts)


def test_sbm_edge_count_is_deterministic_per_seed():
    a = generate_sbm(300, 3, 0.3, 0.01, 16, seed=7)
    b = generate_sbm(300, 3, 0.3, 0.01, 16, seed=7)
    assert a.num_edges == b.num_edges
    np.testing.assert_array_equal(a.col_indices, b.col_indices)


def test_power_law_hubs_own_the_endpoints():
    g = generate_power_law(1000, 2, 2.5, 8, seed=1)
    src, dst = g.edge_list()
    endpoints = np.bincount(src, minlength=g.num_nodes) + np.bincount(dst, minlength=g.num_nodes)
    top = np.argsort(-g.out_degrees, kind="stable")[:g.num_nodes // 100]
    assert endpoints[top].sum() / endpoints.sum() >= 0.10


def test_hash_partition_of_power_law_graph():
    g = generate_power_law(1000, 2, 2.5, 8, seed=1)
    parts, stats = partition_graph(g, 4, PartitionMethod.HASH)
    sizes = [s.core_size for s in stats]
    assert max(sizes) - min(sizes) <= 1
    for part, s in zip(parts, stats):
        core = set(part.core_nodes.tolist())
        members = set(core)
        for v in core:
            members.update(g.neighbors(v).tolist())
        assert s.eta == pytest.approx(len(members) / g.num_nodes)
    assert partition_stats(parts) == stats


def test_more_partitions_shrink_the_local_subgraph():
    etas = {2: [], 4: []}
    for seed in range(10):
        g = generate_power_law(1000, 2, 2.5, 8, seed=seed)
        for u in etas:
            etas[u].append(mean_eta(partition_graph(g, u)[1]))
    assert np.mean(etas[4]) < np.mean(etas[2])
