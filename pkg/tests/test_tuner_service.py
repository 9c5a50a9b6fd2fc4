import time

import numpy as np
import pytest

from src.exceptions import ParameterError
from src.models import (
    KNOBS,
    Constraints,
    DesignPoint,
    DesignSpace,
    MetricRanges,
    Metrics,
    ModelSpec,
    ParallelMode,
    PlatformSpec,
    PPOHyper,
    SamplingDevice,
    TunerConfig,
)
from src.services.evaluators import MemoizedEvaluator, PlantedEvaluator, SimulateEvaluator
from src.services.pipeline_service import PipelineService
from src.services.tuner_service import (
    PPOAgent,
    Transition,
    TunerService,
    TuneResult,
    apply_action,
    clipped_policy_loss,
    dominates,
    encode_state,
    grid_search,
    pareto_extremes,
    pareto_front,
    ppo_update,
    reward,
    tune,
    value_loss,
    weight_simplex,
)

PLANTED = {"batch_size": 512, "bias_rate": 1.0, "workers": 8}
FAST_PPO = PPOHyper(rollout_length=8, clip_epsilon=0.5, policy_lr=0.3, value_lr=0.1, discount=0.5,
                    epochs_per_update=8, max_grad_norm=5.0)


def point(*indices) -> DesignPoint:
    return DesignPoint(indices=tuple(indices) + (0,) * (len(KNOBS) - len(indices)))


def make_agent(seed=0, hyper=None) -> PPOAgent:
    return PPOAgent(len(KNOBS) + 3, len(KNOBS), hyper or PPOHyper(hidden_units=8), np.random.default_rng(seed))


def random_batch(agent, n=6, seed=1):
    rng = np.random.default_rng(seed)
    states = rng.random((n, len(KNOBS) + 3))
    actions = rng.integers(-1, 2, size=(n, len(KNOBS)))
    return states, actions


def current_log_probs(agent, states, actions):
    probs = agent.probabilities(states)
    idx = actions + 1
    return np.log(np.take_along_axis(probs, idx[..., None], axis=2)[..., 0]).sum(axis=1)


# ---------------------------------------------------------------- state / reward

def test_encode_state_scales_indices(planted_space):
    m = Metrics(thr=0.5, mem=0.0, acc=1.0)
    state = encode_state(point(3, 0, 1, 0, 2), m, planted_space)
    np.testing.assert_allclose(state[:len(KNOBS)], [1.0, 0.0, 1 / 3, 0.0, 2 / 3, 0.0, 0.0])
    np.testing.assert_allclose(state[len(KNOBS):], [0.5, 0.0, 1.0])


def test_apply_action_clamps_at_grid_edges(planted_space):
    moved = apply_action(point(0, 0, 3, 0, 1), (-1, 1, 1, 0, 1, 0, 0), planted_space)
    assert moved.indices == (0, 0, 3, 0, 2, 0, 0)
    with pytest.raises(ParameterError):
        apply_action(point(0), (1, 1), planted_space)


def test_reward_is_weighted_normalized_metrics():
    cfg = TunerConfig(weights=(1.0, -0.5, 1.0), ranges=MetricRanges(thr=(0.0, 10.0), mem=(0.0, 100.0)))
    assert reward(Metrics(thr=2.0, mem=40.0, acc=0.4), cfg) == pytest.approx(0.4)
    assert reward(Metrics(thr=5.0, mem=20.0, acc=0.3), cfg) == pytest.approx(0.7)
    capped = cfg.model_copy(update={"constraints": Constraints(mem_max=30.0)})
    assert reward(Metrics(thr=2.0, mem=40.0, acc=0.4), capped) == -1000.0


# ---------------------------------------------------------------- PPO losses

def test_unit_ratio_policy_loss_is_negative_mean_advantage():
    agent = make_agent()
    states, actions = random_batch(agent)
    adv = np.array([0.5, -1.0, 2.0, 0.0, 1.5, -0.25])
    loss, _ = clipped_policy_loss(agent, states, actions, current_log_probs(agent, states, actions), adv, 0.2)
    assert loss == pytest.approx(-adv.mean())


def test_zero_advantage_gives_zero_loss_and_gradient():
    agent = make_agent()
    states, actions = random_batch(agent)
    loss, grads = clipped_policy_loss(agent, states, actions, current_log_probs(agent, states, actions) - 0.3,
                                      np.zeros(states.shape[0]), 0.2)
    assert loss == 0.0
    assert all(np.all(g == 0.0) for g in grads)


def _finite_difference(loss_fn, params, grads, samples=10, eps=1e-6, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(samples):
        k = int(rng.integers(len(params)))
        flat = params[k].reshape(-1)
        i = int(rng.integers(flat.shape[0]))
        old = flat[i]
        flat[i] = old + eps
        plus = loss_fn()
        flat[i] = old - eps
        minus = loss_fn()
        flat[i] = old
        numeric = (plus - minus) / (2 * eps)
        assert grads[k].reshape(-1)[i] == pytest.approx(numeric, rel=1e-4, abs=1e-8)


def test_value_gradient_matches_finite_differences():
    agent = make_agent(seed=3)
    states, _ = random_batch(agent, n=5, seed=4)
    targets = np.linspace(-1.0, 1.0, 5)
    _, grads = value_loss(agent, states, targets)
    _finite_difference(lambda: value_loss(agent, states, targets)[0], agent.value.parameters(), grads)


def test_policy_gradient_matches_finite_differences():
    agent = make_agent(seed=5)
    states, actions = random_batch(agent, n=6, seed=6)
    old = current_log_probs(agent, states, actions) + np.linspace(-0.05, 0.05, 6)
    adv = np.array([1.0, -0.5, 0.25, -2.0, 0.75, 1.5])

    def loss():
        return clipped_policy_loss(agent, states, actions, old, adv, 0.2, entropy_coef=0.1)[0]

    _, grads = clipped_policy_loss(agent, states, actions, old, adv, 0.2, entropy_coef=0.1)
    _finite_difference(loss, agent.policy.parameters(), grads)


def test_ppo_update_needs_transitions():
    with pytest.raises(ParameterError):
        ppo_update(make_agent(), [], PPOHyper())


def test_ppo_update_reports_first_epoch_losses():
    agent = make_agent()
    states, actions = random_batch(agent, n=4)
    buffer = [Transition(s, a, lp, r, s) for s, a, lp, r in
              zip(states, actions, current_log_probs(agent, states, actions), [0.1, 0.4, -0.2, 0.3])]
    losses = ppo_update(agent, buffer, PPOHyper(hidden_units=8))
    assert set(losses) == {"policy_loss", "value_loss", "mean_advantage"}
    assert np.isfinite(list(losses.values())).all()


def test_agent_probabilities_are_distributions():
    agent = make_agent()
    states, _ = random_batch(agent)
    probs = agent.probabilities(states)
    assert probs.shape == (6, len(KNOBS), 3)
    np.testing.assert_allclose(probs.sum(axis=2), 1.0)
    action, log_prob = agent.act(states[0])
    assert set(action.tolist()) <= {-1, 0, 1}
    assert log_prob < 0.0


# ---------------------------------------------------------------- search

def test_singleton_space_returns_its_only_point():
    space = DesignSpace(batch_size=[64], partitions=[1], bias_rate=[1.0], sampling_device=[SamplingDevice.CPU],
                        workers=[1], cache_volume=[0], mode=[ParallelMode.SEQUENTIAL])
    result = tune(space, lambda p: Metrics(thr=0.3, mem=10.0, acc=0.5), TunerConfig(budget=8), seed=0)
    assert result.feasible
    assert result.best_point == point()
    assert result.evaluations == 1
    assert len(result.pareto_front) == 1


def test_budget_below_rollout_is_rejected(planted_space):
    with pytest.raises(ParameterError):
        tune(planted_space, PlantedEvaluator(planted_space, point()), TunerConfig(budget=4), seed=0)


def test_budget_counts_distinct_points(planted_space):
    planted = PlantedEvaluator(planted_space, planted_space.locate(PLANTED))
    result = tune(planted_space, planted, TunerConfig(weights=(1.0, 0.0, 0.0), budget=20, patience=100), seed=1)
    assert result.evaluations == 20
    assert len({row.point for row in result.trace}) == 20
    assert [row.evaluations for row in result.trace] == sorted(row.evaluations for row in result.trace)


def test_constraints_keep_best_feasible(planted_space):
    planted = PlantedEvaluator(planted_space, planted_space.locate(PLANTED))

    def evaluator(p):
        return planted(p).model_copy(update={"mem": 10.0 * p.indices[0]})

    cfg = TunerConfig(weights=(1.0, 0.0, 0.0), budget=64, patience=64,
                      constraints=Constraints(mem_max=15.0), ppo=FAST_PPO)
    result = tune(planted_space, evaluator, cfg, seed=2)
    grid = grid_search(planted_space, evaluator, cfg)
    assert result.best_metrics.mem <= 15.0
    assert result.best_reward == pytest.approx(grid.best_reward)
    assert grid.best_point == planted_space.locate({"batch_size": 128, "bias_rate": 1.0, "workers": 8})
    assert all(m.mem <= 15.0 for _, m in result.pareto_front)
    assert any(row.reward == -1000.0 for row in result.trace)


def test_all_infeasible_space_reports_instead_of_raising(planted_space):
    cfg = TunerConfig(weights=(1.0, 0.0, 0.0), budget=16, constraints=Constraints(mem_max=1.0))
    result = tune(planted_space, lambda p: Metrics(thr=0.5, mem=100.0, acc=1.0), cfg, seed=0)
    assert not result.feasible
    assert result.best_point is None
    assert result.pareto_front == []
    assert result.trace
    assert TunerService(planted_space, cfg).recommend(lambda p: Metrics(thr=0.5, mem=100.0, acc=1.0),
                                                      lambda p: Metrics(thr=0.5, mem=100.0, acc=1.0))[1] is None


def test_grid_search_finds_planted_point_and_breaks_ties_low(planted_space):
    cfg = TunerConfig(weights=(1.0, 0.0, 0.0))
    target = planted_space.locate(PLANTED)
    grid = grid_search(planted_space, PlantedEvaluator(planted_space, target), cfg, workers=4)
    assert grid.best_point == target
    assert grid.best_reward == pytest.approx(1.0)
    assert grid.evaluations == 64
    flat = grid_search(planted_space, lambda p: Metrics(thr=0.5, mem=0.0, acc=1.0), cfg)
    assert flat.best_point == point()


@pytest.mark.slow
def test_planted_optimum_found_within_budget(planted_space):
    target = planted_space.locate(PLANTED)
    planted = PlantedEvaluator(planted_space, target)
    cfg = TunerConfig(weights=(1.0, 0.0, 0.0), budget=300, patience=300)
    hits = sum(tune(planted_space, planted, cfg, seed=s).best_reward >= 0.95 for s in range(10))
    assert hits >= 9


@pytest.mark.slow
def test_ppo_needs_half_the_grid_evaluations(planted_space):
    planted = PlantedEvaluator(planted_space, planted_space.locate(PLANTED))
    cfg = TunerConfig(weights=(1.0, 0.0, 0.0), budget=64, patience=64, ppo=FAST_PPO)
    grid = grid_search(planted_space, planted, cfg)
    successes = 0
    for seed in range(10):
        result = tune(planted_space, planted, cfg, seed=seed)
        if result.best_reward >= 0.95 * grid.best_reward and result.evaluations_to_best <= grid.evaluations // 2:
            successes += 1
    assert successes >= 8


# ---------------------------------------------------------------- pareto

def brute_force_front(items):
    return {p for p, m in items if not any(dominates(o, m) for _, o in items)}


def test_pareto_front_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(1, 12))
        items = [(point(i), Metrics(thr=float(rng.integers(0, 4)), mem=float(rng.integers(0, 4)),
                                    acc=float(rng.integers(0, 2))))
                 for i in range(n)]
        front = pareto_front(items)
        assert {p for p, _ in front} == brute_force_front(items)
        mems = [m.mem for _, m in front]
        assert mems == sorted(mems)


def test_pareto_front_collapses_repeated_points():
    m = Metrics(thr=1.0, mem=1.0, acc=1.0)
    assert pareto_front([(point(1), m), (point(1), m)]) == [(point(1), m)]
    with pytest.raises(ParameterError):
        pareto_front([])


def test_pareto_extremes_pick_both_ends():
    front = [(point(0), Metrics(thr=1.0, mem=1.0, acc=0.9)),
             (point(1), Metrics(thr=2.0, mem=3.0, acc=0.9)),
             (point(2), Metrics(thr=3.0, mem=9.0, acc=0.9))]
    t_star, m_star = pareto_extremes(front)
    assert t_star[0] == point(2)
    assert m_star[0] == point(0)
    with pytest.raises(ParameterError):
        pareto_extremes([])


def test_weight_simplex_spans_throughput_to_memory():
    weights = weight_simplex(5)
    assert len(weights) == 5
    assert weights[0] == (1.0, 0.0, 0.0)
    assert weights[-1] == (0.0, -1.0, 0.0)
    assert weights[2] == pytest.approx((0.5, -0.5, 0.0))
    with pytest.raises(ParameterError):
        weight_simplex(1)


# ---------------------------------------------------------------- evaluators / recommendation

def test_memoized_parallel_evaluation_keeps_order(planted_space):
    calls = []

    def slow(p):
        calls.append(p)
        time.sleep(0.01 * (3 - p.indices[0]))
        return Metrics(thr=float(p.indices[0]), mem=0.0, acc=1.0)

    memo = MemoizedEvaluator(slow, workers=4)
    points = [point(i) for i in range(4)] + [point(0)]
    results = memo.evaluate_many(points)
    assert [m.thr for m in results] == [0.0, 1.0, 2.0, 3.0, 0.0]
    assert memo.evaluations == 4
    memo(point(2))
    assert memo.evaluations == 4


def test_recheck_skips_candidates_that_fail_ground_truth(planted_space):
    cfg = TunerConfig(weights=(1.0, 0.0, 0.0), constraints=Constraints(mem_max=50.0))
    predicted = {point(3): Metrics(thr=0.9, mem=10.0, acc=1.0),
                 point(2): Metrics(thr=0.6, mem=10.0, acc=1.0),
                 point(1): Metrics(thr=0.3, mem=10.0, acc=1.0)}
    truth = {point(3): Metrics(thr=0.9, mem=80.0, acc=1.0),
             point(2): Metrics(thr=0.3, mem=10.0, acc=1.0),
             point(1): Metrics(thr=0.3, mem=10.0, acc=1.0)}
    result = TuneResult(feasible=True, best_point=point(3), best_reward=0.9, best_metrics=predicted[point(3)],
                        trace=[], pareto_front=[], evaluations=3, evaluations_to_best=1,
                        evaluated=list(predicted.items()))
    rec = TunerService(planted_space, cfg).recheck(result, truth.__getitem__)
    assert rec.point == point(2)
    assert rec.candidates_checked == 2
    assert rec.measured == truth[point(2)]
    assert rec.disagreement
    assert rec.measured.mem <= 50.0


@pytest.fixture
def simulated_space() -> DesignSpace:
    return DesignSpace(batch_size=[64, 128], partitions=[1], bias_rate=[1.0],
                       sampling_device=[SamplingDevice.CPU, SamplingDevice.GPU], workers=[1, 4],
                       cache_volume=[0, 16_384], mode=list(ParallelMode))


@pytest.fixture
def simulated(sbm_graph, simulated_space):
    # batch movement dominates sampling, which dominates training
    platform = PlatformSpec(batch_cost_per_byte_s=1e-6)
    service = PipelineService(sbm_graph, platform, ModelSpec(feat_dim=16, num_classes=3), fanouts=[5, 3])
    return MemoizedEvaluator(SimulateEvaluator(service, simulated_space, accuracy_epochs=0), workers=1)


@pytest.mark.slow
def test_weights_move_the_recommendation(simulated_space, simulated):
    cfg = TunerConfig(budget=48, patience=48)
    service = TunerService(simulated_space, cfg, seed=0)
    fast, lean = service.sweep(simulated, [(1.0, 0.0, 0.0), (0.0, -1.0, 0.0)])
    assert fast.best_point != lean.best_point
    assert fast.best_metrics.thr > lean.best_metrics.thr
    assert fast.best_metrics.mem > lean.best_metrics.mem


@pytest.mark.slow
def test_weight_sweep_front_mixes_parallel_modes(simulated_space, simulated):
    cfg = TunerConfig(budget=48, patience=48)
    results = TunerService(simulated_space, cfg, seed=1).sweep(simulated, weight_simplex(5))
    modes = {simulated_space.resolve(p).mode for r in results for p, _ in r.pareto_front}
    assert len(modes) >= 2
