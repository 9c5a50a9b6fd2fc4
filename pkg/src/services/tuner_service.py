"""PPO design-space exploration, grid-search baseline and Pareto-front extraction"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..exceptions import ParameterError
from ..models import (
    KNOBS,
    Constraints,
    DesignPoint,
    DesignSpace,
    MetricRanges,
    Metrics,
    PPOHyper,
    TunerConfig,
)
from .csv_io import TUNE_TRACE_COLUMNS, METRICS_COLUMNS, design_cells, metrics_row, write_rows
from .evaluators import Evaluator, MemoizedEvaluator
from .numeric import MLP, MomentumSGD, log_softmax, min_max, softmax

logger = logging.getLogger("gnn_autotune.tuner")

ACTIONS = (-1, 0, 1)
Evaluation = Tuple[DesignPoint, Metrics]


# ---------------------------------------------------------------- state / reward

def normalize_metrics(m: Metrics, ranges: MetricRanges) -> np.ndarray:
    lo = np.array([ranges.thr[0], ranges.mem[0], ranges.acc[0]])
    hi = np.array([ranges.thr[1], ranges.mem[1], ranges.acc[1]])
    return min_max(np.array(m.as_tuple(), dtype=np.float64), lo, hi)


def encode_state(p: DesignPoint, m: Metrics, space: DesignSpace,
                 ranges: Optional[MetricRanges] = None) -> np.ndarray:
    """Knob indices scaled to [0, 1] followed by the normalized metrics"""
    ranges = ranges or MetricRanges()
    sizes = np.array(space.sizes(), dtype=np.float64)
    prefix = np.array(p.indices, dtype=np.float64) / np.maximum(sizes - 1.0, 1.0)
    return np.concatenate([prefix, normalize_metrics(m, ranges)])


def apply_action(p: DesignPoint, a: Sequence[int], space: DesignSpace) -> DesignPoint:
    if len(a) != len(KNOBS):
        raise ParameterError(f"action needs {len(KNOBS)} entries, got {len(a)}")
    moved = tuple(min(max(i + int(d), 0), s - 1) for i, d, s in zip(p.indices, a, space.sizes()))
    return DesignPoint(indices=moved)


def violates_constraints(m: Metrics, c: Constraints) -> bool:
    if c.mem_max is not None and m.mem > c.mem_max:
        return True
    if c.acc_min is not None and m.acc < c.acc_min:
        return True
    return False


def violates(m: Metrics, cfg: TunerConfig) -> bool:
    return violates_constraints(m, cfg.constraints)


def reward(m: Metrics, cfg: TunerConfig) -> float:
    if violates(m, cfg):
        return float(cfg.penalty)
    return float(np.dot(np.asarray(cfg.weights, dtype=np.float64), normalize_metrics(m, cfg.ranges)))


# ---------------------------------------------------------------- agent

@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray  # per knob in {-1, 0, +1}
    log_prob: float
    reward: float
    next_state: np.ndarray


class PPOAgent:
    """Per-knob categorical policy over {-1, 0, +1} plus a scalar value network"""

    def __init__(self, state_dim: int, num_knobs: int, hyper: PPOHyper, rng: np.random.Generator):
        self.num_knobs = num_knobs
        self.hyper = hyper
        self.rng = rng
        h = hyper.hidden_units
        self.policy = MLP.create([state_dim, h, h, num_knobs * len(ACTIONS)], rng, out_scale=0.01)
        self.value = MLP.create([state_dim, h, h, 1], rng, out_scale=0.01)
        self.policy_opt = MomentumSGD(self.policy.parameters(), hyper.policy_lr, hyper.momentum)
        self.value_opt = MomentumSGD(self.value.parameters(), hyper.value_lr, hyper.momentum)
        self.buffer: List[Transition] = []

    def probabilities(self, states: np.ndarray) -> np.ndarray:
        """Shape (batch, knobs, 3); each knob's row sums to 1"""
        logits = self.policy(states)
        return softmax(logits.reshape(-1, self.num_knobs, len(ACTIONS)))

    def act(self, state: np.ndarray) -> Tuple[np.ndarray, float]:
        probs = self.probabilities(state)[0]
        u = self.rng.random(self.num_knobs)
        choice = np.minimum((u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1), len(ACTIONS) - 1)
        log_prob = float(np.log(probs[np.arange(self.num_knobs), choice]).sum())
        return choice - 1, log_prob


def clipped_policy_loss(agent: PPOAgent, states: np.ndarray, actions: np.ndarray, old_log_probs: np.ndarray,
                        advantages: np.ndarray, clip: float,
                        entropy_coef: float = 0.0) -> Tuple[float, List[np.ndarray]]:
    """-mean(min(rho*A, clip(rho)*A)) - c*mean(H) and its gradient w.r.t. policy parameters"""
    n, k = states.shape[0], agent.num_knobs
    logits, inputs = agent.policy.forward(states)
    z = logits.reshape(n, k, len(ACTIONS))
    logp_all = log_softmax(z)
    probs = np.exp(logp_all)
    idx = (actions + 1).astype(np.int64)
    chosen = np.take_along_axis(logp_all, idx[..., None], axis=2)[..., 0]
    ratio = np.exp(chosen.sum(axis=1) - old_log_probs)
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    unclipped_term = ratio * advantages
    clipped_term = clipped * advantages
    loss = -float(np.minimum(unclipped_term, clipped_term).mean())

    # gradient flows only where the unclipped term is the minimum
    active = unclipped_term <= clipped_term
    dlogp = np.where(active, -ratio * advantages, 0.0) / n
    onehot = np.zeros_like(z)
    np.put_along_axis(onehot, idx[..., None], 1.0, axis=2)
    grad_z = dlogp[:, None, None] * (onehot - probs)

    if entropy_coef > 0.0:
        knob_entropy = -(probs * logp_all).sum(axis=2, keepdims=True)
        loss -= entropy_coef * float(knob_entropy.sum(axis=1).mean())
        dh = -probs * (logp_all + knob_entropy)
        grad_z -= entropy_coef * dh / n

    grads = agent.policy.backward(inputs, grad_z.reshape(n, k * len(ACTIONS)))
    return loss, grads


def value_loss(agent: PPOAgent, states: np.ndarray, targets: np.ndarray) -> Tuple[float, List[np.ndarray]]:
    """Mean squared TD error and its gradient w.r.t. value parameters"""
    out, inputs = agent.value.forward(states)
    err = out[:, 0] - targets
    loss = float(np.mean(err ** 2))
    grads = agent.value.backward(inputs, (2.0 * err / err.shape[0])[:, None])
    return loss, grads


def clip_grad_norm(grads: List[np.ndarray], max_norm: float) -> List[np.ndarray]:
    norm = float(np.sqrt(sum(float((g ** 2).sum()) for g in grads)))
    if norm <= max_norm or norm == 0.0:
        return grads
    return [g * (max_norm / norm) for g in grads]


def ppo_update(agent: PPOAgent, buffer: Sequence[Transition], hyper: PPOHyper) -> Dict[str, float]:
    """Clipped-objective policy steps and TD value steps; losses are from the first epoch"""
    if not buffer:
        raise ParameterError("ppo_update needs a non-empty buffer")
    states = np.stack([t.state for t in buffer])
    next_states = np.stack([t.next_state for t in buffer])
    actions = np.stack([t.action for t in buffer])
    old_log_probs = np.array([t.log_prob for t in buffer])
    rewards = np.array([t.reward for t in buffer])

    advantages = rewards + hyper.discount * agent.value(next_states)[:, 0] - agent.value(states)[:, 0]
    raw_mean = float(advantages.mean())
    if hyper.normalize_advantages and advantages.shape[0] > 1:
        std = float(advantages.std())
        if std > 1e-8:
            advantages = (advantages - advantages.mean()) / std

    losses: Dict[str, float] = {}
    for epoch in range(hyper.epochs_per_update):
        p_loss, p_grads = clipped_policy_loss(agent, states, actions, old_log_probs, advantages,
                                              hyper.clip_epsilon, hyper.entropy_coef)
        agent.policy_opt.step(clip_grad_norm(p_grads, hyper.max_grad_norm))
        targets = rewards + hyper.discount * agent.value(next_states)[:, 0]
        v_loss, v_grads = value_loss(agent, states, targets)
        agent.value_opt.step(clip_grad_norm(v_grads, hyper.max_grad_norm))
        if epoch == 0:
            losses = {"policy_loss": p_loss, "value_loss": v_loss, "mean_advantage": raw_mean}
    return losses


# ---------------------------------------------------------------- search

@dataclass
class TraceRow:
    step: int
    point: DesignPoint
    metrics: Metrics
    reward: float
    best_so_far: Optional[float]
    evaluations: int


@dataclass
class TuneResult:
    feasible: bool
    best_point: Optional[DesignPoint]
    best_reward: Optional[float]
    best_metrics: Optional[Metrics]
    trace: List[TraceRow]
    pareto_front: List[Evaluation]
    evaluations: int
    evaluations_to_best: int
    evaluated: List[Evaluation] = field(default_factory=list)
    losses: List[Dict[str, float]] = field(default_factory=list)


def tune(space: DesignSpace, evaluator: Evaluator, cfg: TunerConfig, seed: int) -> TuneResult:
    """Budget counts distinct points; revisits are served from memory and cost nothing"""
    hyper = cfg.ppo
    if cfg.budget < hyper.rollout_length:
        raise ParameterError(f"budget {cfg.budget} is below rollout length {hyper.rollout_length}")
    memo = evaluator if isinstance(evaluator, MemoizedEvaluator) else MemoizedEvaluator(evaluator, workers=1)
    rng = np.random.default_rng(seed)
    agent = PPOAgent(len(KNOBS) + 3, len(KNOBS), hyper, rng)
    sizes = space.sizes()
    limit = min(cfg.budget, space.size())
    max_steps = 50 * cfg.budget

    trace: List[TraceRow] = []
    losses: List[Dict[str, float]] = []
    visited: Dict[DesignPoint, Metrics] = {}
    feasible_evals: Dict[DesignPoint, Metrics] = {}
    best: Dict[str, object] = {"point": None, "reward": None, "metrics": None, "at": 0}
    stale = 0

    def spent() -> int:
        return len(visited)

    def visit(point: DesignPoint) -> Tuple[Metrics, float]:
        nonlocal stale
        fresh = point not in visited
        m = memo(point)
        visited.setdefault(point, m)
        r = reward(m, cfg)
        improved = False
        if not violates(m, cfg):
            feasible_evals.setdefault(point, m)
            if best["reward"] is None or r > best["reward"]:
                best.update(point=point, reward=r, metrics=m, at=spent())
                improved = True
        if fresh:
            stale = 0 if improved else stale + 1
        trace.append(TraceRow(step=len(trace), point=point, metrics=m, reward=r,
                              best_so_far=best["reward"], evaluations=spent()))
        return m, r

    def done() -> bool:
        return spent() >= limit or stale >= cfg.patience or len(trace) >= max_steps

    while not done():
        point = DesignPoint(indices=tuple(int(rng.integers(s)) for s in sizes))
        m, _ = visit(point)
        state = encode_state(point, m, space, cfg.ranges)
        for _ in range(hyper.rollout_length):
            if done():
                break
            action, log_prob = agent.act(state)
            point = apply_action(point, action, space)
            m, r = visit(point)
            next_state = encode_state(point, m, space, cfg.ranges)
            agent.buffer.append(Transition(state, action, log_prob, r, next_state))
            state = next_state
        if agent.buffer:
            losses.append(ppo_update(agent, agent.buffer, hyper))
            agent.buffer.clear()

    front = pareto_front(list(feasible_evals.items())) if feasible_evals else []
    result = TuneResult(
        feasible=best["point"] is not None,
        best_point=best["point"],
        best_reward=best["reward"],
        best_metrics=best["metrics"],
        trace=trace,
        pareto_front=front,
        evaluations=spent(),
        evaluations_to_best=int(best["at"]),
        evaluated=list(visited.items()),
        losses=losses,
    )
    if result.feasible:
        logger.info(f"tune: best reward {result.best_reward:.4f} at {result.best_point.indices} "
                    f"after {result.evaluations_to_best}/{result.evaluations} evaluations")
    else:
        logger.warning(f"tune: no feasible point in {result.evaluations} evaluations")
    return result


@dataclass
class GridResult:
    feasible: bool
    best_point: Optional[DesignPoint]
    best_reward: Optional[float]
    best_metrics: Optional[Metrics]
    evaluations: int
    evaluated: List[Evaluation]


def grid_search(space: DesignSpace, evaluator: Evaluator, cfg: TunerConfig,
                workers: Optional[int] = None) -> GridResult:
    """Exhaustive baseline; ties go to the lexicographically smallest index vector"""
    memo = MemoizedEvaluator(evaluator, workers=workers)
    points = list(space.points())
    metrics = memo.evaluate_many(points)
    best_point, best_reward, best_metrics = None, None, None
    for point, m in zip(points, metrics):
        if violates(m, cfg):
            continue
        r = reward(m, cfg)
        if best_reward is None or r > best_reward:
            best_point, best_reward, best_metrics = point, r, m
    return GridResult(feasible=best_point is not None, best_point=best_point, best_reward=best_reward,
                      best_metrics=best_metrics, evaluations=len(points),
                      evaluated=list(zip(points, metrics)))


# ---------------------------------------------------------------- pareto

def dominates(a: Metrics, b: Metrics) -> bool:
    """a is no worse on thr, acc (max) and mem (min), and strictly better on one"""
    no_worse = a.thr >= b.thr and a.acc >= b.acc and a.mem <= b.mem
    better = a.thr > b.thr or a.acc > b.acc or a.mem < b.mem
    return no_worse and better


def pareto_front(evaluations: Sequence[Evaluation]) -> List[Evaluation]:
    """Non-dominated subset, sorted by ascending memory"""
    if not evaluations:
        raise ParameterError("pareto_front needs at least one evaluation")
    unique: Dict[DesignPoint, Metrics] = {}
    for point, m in evaluations:
        unique.setdefault(point, m)
    items = list(unique.items())
    front = [items[i] for i in non_dominated([m for _, m in items])]
    return sorted(front, key=lambda e: (e[1].mem, -e[1].thr, -e[1].acc, e[0].indices))


def non_dominated(metrics: Sequence[Metrics]) -> List[int]:
    """Indices of entries no other entry dominates"""
    return [i for i, m in enumerate(metrics) if not any(dominates(other, m) for other in metrics)]


def pareto_extremes(front: Sequence[Evaluation]) -> Tuple[Evaluation, Evaluation]:
    """(T*, M*): the throughput-first and memory-first ends of a front"""
    if not front:
        raise ParameterError("pareto_extremes needs a non-empty front")
    t_star = max(front, key=lambda e: (e[1].thr, -e[1].mem))
    m_star = min(front, key=lambda e: (e[1].mem, -e[1].thr))
    return t_star, m_star


def weight_simplex(points: int = 5) -> List[Tuple[float, float, float]]:
    """Weights sliding from pure throughput (1, 0, 0) to pure memory (0, -1, 0)"""
    if points < 2:
        raise ParameterError("weight_simplex needs at least 2 points")
    return [(float(1.0 - t), float(-t), 0.0) for t in np.linspace(0.0, 1.0, points)]


# ---------------------------------------------------------------- recommendation

@dataclass
class Recommendation:
    point: DesignPoint
    predicted: Metrics
    measured: Metrics
    predicted_reward: float
    measured_reward: float
    disagreement: bool
    candidates_checked: int


def relative_disagreement(predicted: Metrics, measured: Metrics) -> float:
    worst = 0.0
    for p, t in zip(predicted.as_tuple(), measured.as_tuple()):
        denom = max(abs(t), 1e-12)
        worst = max(worst, abs(p - t) / denom)
    return worst


class TunerService:
    """Surrogate-driven search followed by a ground-truth recheck of the leading candidates"""

    DISAGREEMENT_THRESHOLD = 0.25

    def __init__(self, space: DesignSpace, cfg: TunerConfig, seed: int = 0):
        self.space = space
        self.cfg = cfg
        self.seed = seed

    def tune(self, evaluator: Evaluator) -> TuneResult:
        return tune(self.space, evaluator, self.cfg, self.seed)

    def recheck(self, result: TuneResult, truth: Evaluator) -> Optional[Recommendation]:
        candidates = [(p, m, reward(m, self.cfg)) for p, m in result.evaluated if not violates(m, self.cfg)]
        candidates.sort(key=lambda c: (-c[2], c[0].indices))
        for checked, (point, predicted, predicted_reward) in enumerate(candidates[:self.cfg.recheck_limit], 1):
            measured = truth(point)
            if violates(measured, self.cfg):
                logger.info(f"recheck: {point.indices} violates constraints under ground truth")
                continue
            gap = relative_disagreement(predicted, measured)
            rec = Recommendation(point=point, predicted=predicted, measured=measured,
                                 predicted_reward=predicted_reward, measured_reward=reward(measured, self.cfg),
                                 disagreement=gap > self.DISAGREEMENT_THRESHOLD, candidates_checked=checked)
            if rec.disagreement:
                logger.warning(f"recheck: surrogate and ground truth disagree by {gap:.1%} at {point.indices}")
            return rec
        return None

    def recommend(self, evaluator: Evaluator, truth: Evaluator) -> Tuple[TuneResult, Optional[Recommendation]]:
        result = self.tune(evaluator)
        if not result.feasible:
            return result, None
        return result, self.recheck(result, truth)

    def sweep(self, evaluator: Evaluator, weights: Sequence[Tuple[float, float, float]]) -> List[TuneResult]:
        """One tuning run per weight vector, sharing the evaluator's memo"""
        memo = evaluator if isinstance(evaluator, MemoizedEvaluator) else MemoizedEvaluator(evaluator, workers=1)
        results = []
        for w in weights:
            cfg = self.cfg.model_copy(update={"weights": tuple(w)})
            results.append(tune(self.space, memo, cfg, self.seed))
        return results

    # ------------------------------------------------------------ artifacts

    def write_trace(self, result: TuneResult, path: str) -> None:
        rows = []
        for row in result.trace:
            best = "" if row.best_so_far is None else repr(float(row.best_so_far))
            rows.append([row.step] + design_cells(self.space.resolve(row.point))
                        + [repr(float(v)) for v in row.metrics.as_tuple()] + [repr(float(row.reward)), best])
        write_rows(path, TUNE_TRACE_COLUMNS, rows)

    def write_front(self, front: Sequence[Evaluation], path: str) -> None:
        write_rows(path, METRICS_COLUMNS, [metrics_row(self.space.resolve(p), m) for p, m in front])
