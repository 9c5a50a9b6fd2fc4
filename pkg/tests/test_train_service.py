import numpy as np
import pytest

from src.exceptions import ConfigurationError, ParameterError, ShapeError
from src.models import ModelSpec, SamplerConfig
from src.services.cache_service import cache_for_fraction
from src.services.graph_service import generate_sbm, partition_graph, reindex
from src.services.numeric import cross_entropy
from src.services.sampler_service import sample_khop
from src.services.train_service import (
    Gradients,
    WorkerBatch,
    apply_gradients,
    backward_step,
    compute_gradients,
    forward,
    init_model,
    measure_accuracy_drop,
    run_training,
    seed_labels,
    sync_gradients,
    train_step,
)


def _worker_batch(g, seeds, fanouts=(5, 3)):
    batch = sample_khop(g, seeds, SamplerConfig(fanouts=list(fanouts), rng_seed=1))
    return WorkerBatch(batch, g.features[batch.unique_nodes], seed_labels(batch, g.labels))


def _loss(model, wb):
    logits, _ = forward(model, wb.batch, wb.features)
    return cross_entropy(logits, wb.labels)[0]


def test_gradients_match_finite_differences(sbm_graph):
    spec = ModelSpec(feat_dim=16, hidden_dim=8, num_classes=3)
    model = init_model(spec, seed=2)
    wb = _worker_batch(sbm_graph, np.arange(10))
    logits, acts = forward(model, wb.batch, wb.features)
    grads, _ = compute_gradients(model, logits, wb.labels, acts)
    eps = 1e-6
    rng = np.random.default_rng(0)
    for name, analytic in (("W1", grads.dW1), ("W2", grads.dW2)):
        for _ in range(5):
            i = int(rng.integers(analytic.shape[0]))
            j = int(rng.integers(analytic.shape[1]))
            plus, minus = model.copy(), model.copy()
            getattr(plus, name)[i, j] += eps
            getattr(minus, name)[i, j] -= eps
            numeric = (_loss(plus, wb) - _loss(minus, wb)) / (2 * eps)
            assert analytic[i, j] == pytest.approx(numeric, abs=1e-6, rel=1e-4)


def test_forward_rejects_mismatched_features(sbm_graph):
    model = init_model(ModelSpec(feat_dim=16, num_classes=3), seed=0)
    wb = _worker_batch(sbm_graph, [0, 1, 2])
    with pytest.raises(ShapeError):
        forward(model, wb.batch, wb.features[:-1])
    with pytest.raises(ShapeError):
        forward(model, wb.batch, wb.features[:, :8])


def test_backward_step_lowers_the_loss(sbm_graph):
    model = init_model(ModelSpec(feat_dim=16, num_classes=3), seed=0)
    wb = _worker_batch(sbm_graph, np.arange(20))
    logits, acts = forward(model, wb.batch, wb.features)
    updated, loss = backward_step(model, logits, wb.labels, acts, lr=0.05)
    assert loss == pytest.approx(_loss(model, wb))
    assert _loss(updated, wb) < loss


def test_sync_gradients_averages_and_validates():
    a = Gradients(np.ones((2, 2)), np.zeros((2, 1)))
    b = Gradients(3 * np.ones((2, 2)), np.ones((2, 1)))
    synced = sync_gradients([a, b])
    np.testing.assert_allclose(synced.dW1, 2 * np.ones((2, 2)))
    np.testing.assert_allclose(synced.dW2, 0.5 * np.ones((2, 1)))
    assert sync_gradients([a]) is a
    with pytest.raises(ParameterError):
        sync_gradients([])
    with pytest.raises(ShapeError):
        sync_gradients([a, Gradients(np.ones((3, 2)), np.zeros((2, 1)))])


def test_zero_learning_rate_keeps_weights():
    model = init_model(ModelSpec(feat_dim=4, hidden_dim=4, num_classes=2), seed=0)
    grads = Gradients(np.ones_like(model.W1), np.ones_like(model.W2))
    same = apply_gradients(model, grads, 0.0)
    assert same is not model
    np.testing.assert_array_equal(same.W1, model.W1)
    np.testing.assert_array_equal(same.W2, model.W2)


def test_two_partitions_match_one_global_batch():
    # two complete, disconnected blocks; fanouts exceed every degree so sampling is exhaustive
    g = generate_sbm(40, 2, 1.0, 0.0, 8, seed=0)
    fanouts = (25, 25)
    model = init_model(ModelSpec(feat_dim=8, hidden_dim=8, num_classes=2), seed=3)
    block_a, block_b = [0, 2, 4, 6], [1, 3, 5, 7]

    single, loss_single, _ = train_step(model, [_worker_batch(g, block_a + block_b, fanouts)], lr=0.1)

    parts, _ = partition_graph(g, 2)
    local = [_worker_batch(p.local_graph, reindex(seeds, p), fanouts)
             for p, seeds in zip(parts, (block_a, block_b))]
    split, loss_split, _ = train_step(model, local, lr=0.1)

    np.testing.assert_allclose(split.W1, single.W1, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(split.W2, single.W2, rtol=1e-9, atol=1e-12)
    assert loss_split == pytest.approx(loss_single)


@pytest.mark.slow
def test_training_on_sbm_learns_the_blocks():
    g = generate_sbm(300, 3, 0.3, 0.01, 16, seed=0)
    spec = ModelSpec(feat_dim=16, hidden_dim=16, num_classes=3, learning_rate=0.5)
    run = run_training(g, spec, SamplerConfig(fanouts=[10, 5]), None, batch_size=32, epochs=30)
    report = run.report
    assert report.epochs_run == 30
    quarter = len(report.loss_curve) // 4
    assert np.mean(report.loss_curve[-quarter:]) < np.mean(report.loss_curve[:quarter])
    assert report.test_accuracy >= 0.9
    assert report.hit_rate == 0.0
    assert report.max_batch_bytes > 0


@pytest.mark.slow
def test_accuracy_drop_grows_with_bias_rate():
    g = generate_sbm(300, 3, 0.3, 0.01, 16, seed=0)
    spec = ModelSpec(feat_dim=16, num_classes=3, learning_rate=0.5)
    cache = cache_for_fraction(g, 0.01)
    drops = {}
    for gamma in (1.0, 4.0, 16.0):
        cfg = SamplerConfig(fanouts=[10, 5], bias_rate=gamma)
        drops[gamma] = np.mean([
            measure_accuracy_drop(g, spec, cfg, cache, batch_size=32, epochs=10, seed=s).accuracy_drop
            for s in range(5)
        ])
    assert drops[1.0] == 0.0
    assert drops[4.0] >= drops[1.0] - 0.02
    assert drops[16.0] >= drops[4.0] - 0.02


def test_training_is_reproducible(sbm_graph):
    spec = ModelSpec(feat_dim=16, num_classes=3)
    cache = cache_for_fraction(sbm_graph, 0.2)
    cfg = SamplerConfig(bias_rate=4.0)
    a = run_training(sbm_graph, spec, cfg, cache, batch_size=16, epochs=2, u=2, seed=5)
    b = run_training(sbm_graph, spec, cfg, cache, batch_size=16, epochs=2, u=2, seed=5)
    np.testing.assert_array_equal(a.model.W1, b.model.W1)
    assert a.report.test_accuracy == b.report.test_accuracy
    assert 0.0 < a.report.hit_rate < 1.0


def test_accuracy_drop_is_reference_minus_biased(sbm_graph):
    spec = ModelSpec(feat_dim=16, num_classes=3)
    cache = cache_for_fraction(sbm_graph, 0.2)
    report = measure_accuracy_drop(sbm_graph, spec, SamplerConfig(bias_rate=8.0), cache, batch_size=32, epochs=2)
    assert report.accuracy_drop == pytest.approx(report.reference_accuracy - report.test_accuracy)


def test_training_rejects_mismatched_model(sbm_graph):
    with pytest.raises(ShapeError):
        run_training(sbm_graph, ModelSpec(feat_dim=8), SamplerConfig(), None, batch_size=8, epochs=1)


def test_training_needs_train_nodes():
    g = generate_sbm(20, 2, 0.5, 0.0, 4, seed=0)
    g.train_mask[:] = False
    with pytest.raises(ConfigurationError):
        run_training(g, ModelSpec(feat_dim=4, num_classes=2), SamplerConfig(), None, batch_size=8, epochs=1)
