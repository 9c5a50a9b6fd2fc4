"""Sequential / P-mode1 / P-mode2 scheduling: analytic model, event simulator and threaded executor"""
import heapq
import logging
import queue
import statistics
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..exceptions import ParameterError, UndefinedThroughputError
from ..models import (
    BYTES_PER_VALUE,
    CacheConfig,
    DesignValues,
    ExecutionReport,
    MemoryEstimate,
    Metrics,
    ModelSpec,
    ParallelMode,
    PartitionMethod,
    PipelineConfig,
    PlatformSpec,
    SamplerConfig,
    StageCosts,
)
from .cache_service import CacheAccounting, CacheState, build_static_cache, hit_rate, localize_cache, retrieve_features
from .graph_service import Graph, Partition, partition_graph
from .sampler_service import SampleBatch, sample_khop
from .train_service import (
    WorkerBatch,
    evaluate,
    init_model,
    plan_epoch,
    run_training,
    seed_labels,
    train_step,
)

logger = logging.getLogger("gnn_autotune.pipeline")

# ---------------------------------------------------------------- analytic model

def analytic_epoch_time(mode: ParallelMode, costs: StageCosts, n: int) -> float:
    if n < 1:
        raise ParameterError(f"workers must be >= 1, got {n}")
    ts, tb, tt = costs.t_sample, costs.t_batch, costs.t_train
    if mode == ParallelMode.SEQUENTIAL:
        per_iter = ts + tb + tt
    elif mode == ParallelMode.MODE1:
        per_iter = max((ts + tb) / n, tt)
    else:
        per_iter = max(ts / n, tb + tt)
    return costs.iters_per_epoch * per_iter


def analytic_throughput(mode: ParallelMode, costs: StageCosts, n: int) -> float:
    """Epochs per second"""
    epoch_time = analytic_epoch_time(mode, costs, n)
    if epoch_time <= 0.0:
        raise UndefinedThroughputError("all stage costs are zero")
    return 1.0 / epoch_time


def analytic_memory(mode: ParallelMode, design: DesignValues, platform: PlatformSpec,
                    B: int, model_bytes: int) -> MemoryEstimate:
    n = PipelineConfig(mode=mode, workers=design.workers).effective_workers
    theta = design.cache_volume
    runtime = platform.runtime_overhead_bytes
    if mode == ParallelMode.MODE1:
        peak = n * (B + model_bytes + runtime) + theta
    elif mode == ParallelMode.MODE2:
        peak = B + model_bytes + n * runtime + theta
    else:
        peak = B + model_bytes + runtime + theta
    return MemoryEstimate(
        cache=theta,
        batch=B,
        model=model_bytes,
        runtime=runtime,
        peak_total=peak,
        total_cache=platform.num_gpus * theta,
    )


# ---------------------------------------------------------------- discrete-event simulation

class TraceEvent(NamedTuple):
    time: float
    worker: str
    stage: str
    iteration: int
    event: str


@dataclass
class SimulationResult:
    makespan: float
    trace: List[TraceEvent]
    queue_occupancy: List[Tuple[float, int, int]] = field(default_factory=list)  # (time, queue, depth)
    utilization: Dict[str, float] = field(default_factory=dict)

    @property
    def throughput(self) -> float:
        if self.makespan <= 0.0:
            raise UndefinedThroughputError("zero makespan")
        return 1.0 / self.makespan

    @property
    def max_queue_depth(self) -> int:
        return max((d for _, _, d in self.queue_occupancy), default=0)


# event kinds; consumer completions drain queues before producers refill them
_EV_CONSUMER_DONE, _EV_PRODUCER_DONE = range(2)


def _stage_split(mode: ParallelMode, costs: StageCosts):
    if mode == ParallelMode.MODE1:
        return [("sample", costs.t_sample), ("batch", costs.t_batch)], [("train", costs.t_train)]
    return [("sample", costs.t_sample)], [("batch", costs.t_batch), ("train", costs.t_train)]


def _emit(trace: List[TraceEvent], worker: str, stages, start: float, iteration: int) -> float:
    t = start
    for stage, dt in stages:
        trace.append(TraceEvent(t, worker, stage, iteration, "start"))
        t += dt
        trace.append(TraceEvent(t, worker, stage, iteration, "end"))
    return t


def simulate_pipeline(mode: ParallelMode, costs: StageCosts, n: int, iters: int,
                      queue_capacity: int) -> SimulationResult:
    """Deterministic schedule of `iters` iterations.

    Producers own one bounded queue each and handle iterations i, i+n, ...;
    the single consumer takes iteration k from queue k % n in order. A producer
    that finishes into a full queue holds its item until a slot frees.
    """
    if queue_capacity < 1:
        raise ParameterError(f"queue_capacity must be >= 1, got {queue_capacity}")
    if iters < 1:
        raise ParameterError(f"iters must be >= 1, got {iters}")
    if n < 1:
        raise ParameterError(f"workers must be >= 1, got {n}")

    trace: List[TraceEvent] = []
    if mode == ParallelMode.SEQUENTIAL:
        t = 0.0
        stages = [("sample", costs.t_sample), ("batch", costs.t_batch), ("train", costs.t_train)]
        for k in range(iters):
            t = _emit(trace, "worker0", stages, t, k)
        busy = iters * (costs.t_sample + costs.t_batch + costs.t_train)
        return SimulationResult(t, trace, [], {"worker0": busy / t if t > 0 else 0.0})

    producer_stages, consumer_stages = _stage_split(mode, costs)
    producer_time = sum(dt for _, dt in producer_stages)
    consumer_time = sum(dt for _, dt in consumer_stages)
    assigned = [deque(range(i, iters, n)) for i in range(n)]
    queues = [deque() for _ in range(n)]
    holding: List[Optional[int]] = [None] * n
    occupancy: List[Tuple[float, int, int]] = []
    busy = {f"producer{i}": 0.0 for i in range(n)}
    busy["consumer"] = 0.0
    events: list = []
    seq = 0
    consumer_idle = True
    next_k = 0
    makespan = 0.0

    def push(t, kind, payload):
        nonlocal seq
        heapq.heappush(events, (t, kind, seq, payload))
        seq += 1

    def start_producer(i, t):
        if assigned[i]:
            k = assigned[i].popleft()
            end = _emit(trace, f"producer{i}", producer_stages, t, k)
            busy[f"producer{i}"] += producer_time
            push(end, _EV_PRODUCER_DONE, (i, k))

    def try_consume(t):
        nonlocal consumer_idle, next_k
        if not consumer_idle or next_k >= iters:
            return
        i = next_k % n
        if not queues[i] or queues[i][0] != next_k:
            return
        queues[i].popleft()
        occupancy.append((t, i, len(queues[i])))
        if holding[i] is not None:
            queues[i].append(holding[i])
            occupancy.append((t, i, len(queues[i])))
            holding[i] = None
            start_producer(i, t)
        consumer_idle = False
        end = _emit(trace, "consumer", consumer_stages, t, next_k)
        busy["consumer"] += consumer_time
        push(end, _EV_CONSUMER_DONE, next_k)
        next_k += 1

    for i in range(n):
        start_producer(i, 0.0)

    while events:
        t, kind, _, payload = heapq.heappop(events)
        if kind == _EV_PRODUCER_DONE:
            i, k = payload
            if len(queues[i]) < queue_capacity:
                queues[i].append(k)
                occupancy.append((t, i, len(queues[i])))
                start_producer(i, t)
            else:
                holding[i] = k
        else:
            consumer_idle = True
            makespan = t
        try_consume(t)

    utilization = {w: (b / makespan if makespan > 0 else 0.0) for w, b in busy.items()}
    trace.sort(key=lambda e: e.time)
    return SimulationResult(makespan, trace, occupancy, utilization)


# ---------------------------------------------------------------- executor + cost probes

@dataclass(frozen=True)
class CostProbe:
    costs: StageCosts
    batch_bytes: int
    activation_bytes: int


class PipelineService:
    """Runs design points against one graph on one platform"""

    def __init__(self, g: Graph, platform: PlatformSpec, spec: ModelSpec, fanouts: Sequence[int],
                 seed: int = 0, queue_capacity: int = 4,
                 partition_method: PartitionMethod = PartitionMethod.HASH):
        self.graph = g
        self.platform = platform
        self.spec = spec
        self.fanouts = list(fanouts)
        self.seed = seed
        self.queue_capacity = queue_capacity
        self.partition_method = partition_method
        self._partitions: Dict[int, List[Partition]] = {}
        self._caches: Dict[Tuple[int, int], CacheState] = {}
        self._accuracy: Dict[tuple, float] = {}
        self._lock = threading.Lock()

    # -- shared setup

    def pipeline_config(self, design: DesignValues) -> PipelineConfig:
        return PipelineConfig(mode=design.mode, workers=design.workers, queue_capacity=self.queue_capacity)

    def partitions(self, u: int) -> List[Partition]:
        with self._lock:
            if u not in self._partitions:
                self._partitions[u] = partition_graph(self.graph, u, self.partition_method)[0]
            return self._partitions[u]

    def cache(self, volume: int, u: int) -> CacheState:
        with self._lock:
            key = (volume, u)
            if key not in self._caches:
                self._caches[key] = build_static_cache(self.graph, CacheConfig(volume_bytes=volume, num_devices=u))
            return self._caches[key]

    def sampler_config(self, design: DesignValues) -> SamplerConfig:
        return SamplerConfig(fanouts=self.fanouts, bias_rate=design.bias_rate, rng_seed=self.seed)

    def _setup(self, design: DesignValues):
        parts = self.partitions(design.partitions)
        cache = self.cache(design.cache_volume, design.partitions)
        return parts, [localize_cache(cache, p) for p in parts], cache

    # -- cost probes

    def _probe_work(self, parts: List[Partition], batch_size: int, probe_iters: int):
        work = []
        epoch = 0
        while len(work) < probe_iters:
            plan = plan_epoch(parts, batch_size, epoch, self.seed)
            if not plan:
                break
            work.extend((epoch, it, w) for it, w in enumerate(plan))
            epoch += 1
        return work[:probe_iters]

    def profile_stage_costs(self, design: DesignValues, probe_iters: int = 5) -> CostProbe:
        """Wall-clock medians of each stage run in isolation over probe_iters iterations"""
        if probe_iters < 3:
            raise ParameterError(f"probe_iters must be >= 3, got {probe_iters}")
        parts, local_caches, cache = self._setup(design)
        cfg = self.sampler_config(design)
        acc = CacheAccounting(cache.num_devices)
        model = init_model(self.spec, self.seed)
        lat = self.platform.stage_latency_s
        mult = self.platform.sample_multiplier(design.sampling_device)
        samples, batches, trains = [], [], []
        max_b = max_act = 0
        for epoch, it, work in self._probe_work(parts, design.batch_size, probe_iters):
            t0 = time.perf_counter()
            sampled = [(idx, sample_khop(parts[idx].local_graph, seeds, cfg, local_caches[idx],
                                         salt=(epoch, it, idx))) for idx, seeds in work]
            t1 = time.perf_counter()
            wbs = self._retrieve(parts, local_caches, sampled, acc)
            t2 = time.perf_counter()
            _, _, act = train_step(model, wbs, 0.0)
            t3 = time.perf_counter()
            samples.append((t1 - t0 + lat.sample) * mult)
            batches.append(t2 - t1 + lat.batch)
            trains.append(t3 - t2 + lat.train)
            max_b = max(max_b, max(wb.batch_bytes for wb in wbs))
            max_act = max(max_act, act)
        iters = max(1, len(plan_epoch(parts, design.batch_size, 0, self.seed)))
        costs = StageCosts(t_sample=statistics.median(samples), t_batch=statistics.median(batches),
                           t_train=statistics.median(trains), iters_per_epoch=iters)
        return CostProbe(costs, max_b, max_act)

    def estimate_stage_costs(self, design: DesignValues, probe_iters: int = 3) -> CostProbe:
        """Count-based costs from the platform's unit calibration; deterministic.

        Partitions run on separate devices, so an iteration costs as much as its
        slowest worker.
        """
        parts, local_caches, _ = self._setup(design)
        cfg = self.sampler_config(design)
        p = self.platform
        lat = p.stage_latency_s
        mult = p.sample_multiplier(design.sampling_device)
        spec = self.spec
        samples, batches, trains = [], [], []
        max_b = max_act = 0
        for epoch, it, work in self._probe_work(parts, design.batch_size, max(1, probe_iters)):
            ts = tb = tt = 0.0
            for idx, seeds in work:
                batch = sample_khop(parts[idx].local_graph, seeds, cfg, local_caches[idx], salt=(epoch, it, idx))
                n_u = int(batch.unique_nodes.shape[0])
                n_s = int(np.unique(batch.seeds).shape[0])
                cached = int(np.count_nonzero(local_caches[idx].is_cached(batch.unique_nodes)))
                moved = (n_u - cached) * spec.feat_dim * BYTES_PER_VALUE + batch.num_edges * 2 * BYTES_PER_VALUE
                flops = 6 * (n_u * spec.feat_dim * spec.hidden_dim + n_s * spec.hidden_dim * spec.num_classes)
                ts = max(ts, batch.num_edges * p.sample_cost_per_edge_s)
                tb = max(tb, moved * p.batch_cost_per_byte_s)
                tt = max(tt, flops * p.train_cost_per_flop_s)
                max_b = max(max_b, n_u * spec.feat_dim * BYTES_PER_VALUE + batch.num_edges * 2 * BYTES_PER_VALUE)
                max_act = max(max_act, (n_u * spec.hidden_dim + n_s * spec.num_classes) * BYTES_PER_VALUE)
            samples.append((ts + lat.sample) * mult)
            batches.append(tb + lat.batch)
            trains.append(tt + lat.train)
        iters = max(1, len(plan_epoch(parts, design.batch_size, 0, self.seed)))
        costs = StageCosts(t_sample=float(np.mean(samples)), t_batch=float(np.mean(batches)),
                           t_train=float(np.mean(trains)), iters_per_epoch=iters)
        return CostProbe(costs, max_b, max_act)

    # -- evaluation paths

    def simulated_accuracy(self, design: DesignValues, epochs: int) -> float:
        """Micro-training accuracy; only batch size, partitions, bias rate and cache matter"""
        key = (design.batch_size, design.partitions, design.bias_rate, design.cache_volume, epochs)
        with self._lock:
            if key in self._accuracy:
                return self._accuracy[key]
        cache = self.cache(design.cache_volume, design.partitions)
        run = run_training(self.graph, self.spec, self.sampler_config(design), cache, design.batch_size,
                           epochs, design.partitions, partitions=self.partitions(design.partitions),
                           seed=self.seed)
        with self._lock:
            self._accuracy[key] = run.report.test_accuracy
        return run.report.test_accuracy

    def simulate(self, design: DesignValues, accuracy_epochs: int = 2) -> Tuple[Metrics, SimulationResult, CostProbe]:
        probe = self.estimate_stage_costs(design)
        cfg = self.pipeline_config(design)
        result = simulate_pipeline(cfg.mode, probe.costs, cfg.effective_workers, probe.costs.iters_per_epoch,
                                   cfg.queue_capacity)
        memory = analytic_memory(design.mode, design, self.platform, probe.batch_bytes,
                                 self.spec.param_bytes + probe.activation_bytes)
        acc = self.simulated_accuracy(design, accuracy_epochs)
        metrics = Metrics(thr=result.throughput, mem=float(memory.peak_total), acc=acc)
        return metrics, result, probe

    def _retrieve(self, parts, local_caches, sampled: List[Tuple[int, SampleBatch]],
                  acc: CacheAccounting) -> List[WorkerBatch]:
        out = []
        for idx, batch in sampled:
            g = parts[idx].local_graph
            feats, stats = retrieve_features(batch, local_caches[idx], g, acc)
            out.append(WorkerBatch(batch, feats, seed_labels(batch, g.labels), stats.batch_bytes))
        return out

    def execute(self, design: DesignValues, epochs: int) -> ExecutionReport:
        """Real concurrent run; same learning trajectory as run_training for equal seeds"""
        if epochs < 1:
            raise ParameterError(f"epochs must be >= 1 to measure throughput, got {epochs}")
        parts, local_caches, cache = self._setup(design)
        cfg = self.sampler_config(design)
        acc = CacheAccounting(cache.num_devices)
        lat = self.platform.stage_latency_s
        mult = self.platform.sample_multiplier(design.sampling_device)
        items = [(epoch, it, work) for epoch in range(epochs)
                 for it, work in enumerate(plan_epoch(parts, design.batch_size, epoch, self.seed))]
        if not items:
            raise ParameterError("no training iterations planned")

        def sample_item(k: int) -> List[Tuple[int, SampleBatch]]:
            epoch, it, work = items[k]
            sampled = [(idx, sample_khop(parts[idx].local_graph, seeds, cfg, local_caches[idx],
                                         salt=(epoch, it, idx))) for idx, seeds in work]
            time.sleep(lat.sample * mult)
            return sampled

        def batch_item(sampled) -> List[WorkerBatch]:
            wbs = self._retrieve(parts, local_caches, sampled, acc)
            time.sleep(lat.batch)
            return wbs

        model = init_model(self.spec, self.seed)
        losses: Dict[int, List[float]] = {}
        max_b = max_act = 0
        pipe = self.pipeline_config(design)
        n = pipe.effective_workers

        def consume(k: int, wbs: List[WorkerBatch]) -> None:
            nonlocal model, max_b, max_act
            model, loss, act = train_step(model, wbs, self.spec.learning_rate)
            time.sleep(lat.train)
            losses.setdefault(items[k][0], []).append(loss)
            max_b = max(max_b, max(wb.batch_bytes for wb in wbs))
            max_act = max(max_act, act)

        start = time.perf_counter()
        if design.mode == ParallelMode.SEQUENTIAL:
            for k in range(len(items)):
                consume(k, batch_item(sample_item(k)))
        else:
            produce_batches = design.mode == ParallelMode.MODE1
            queues = [queue.Queue(maxsize=pipe.queue_capacity) for _ in range(n)]
            stop = threading.Event()

            def offer(i: int, entry) -> bool:
                while not stop.is_set():
                    try:
                        queues[i].put(entry, timeout=0.05)
                        return True
                    except queue.Full:
                        continue
                return False

            def producer(i: int) -> None:
                k = i
                try:
                    for k in range(i, len(items), n):
                        if stop.is_set():
                            return
                        sampled = sample_item(k)
                        if not offer(i, (k, batch_item(sampled) if produce_batches else sampled)):
                            return
                except BaseException as e:  # surfaced by the consumer
                    offer(i, (k, e))

            threads = [threading.Thread(target=producer, args=(i,), daemon=True, name=f"producer{i}")
                       for i in range(n)]
            for th in threads:
                th.start()
            try:
                for k in range(len(items)):
                    kk, payload = queues[k % n].get()
                    if isinstance(payload, BaseException):
                        raise payload
                    consume(kk, payload if produce_batches else batch_item(payload))
            finally:
                # unblock producers waiting on a full queue before joining them
                stop.set()
                for q in queues:
                    while True:
                        try:
                            q.get_nowait()
                        except queue.Empty:
                            break
                for th in threads:
                    th.join()
        wall = time.perf_counter() - start

        memory = analytic_memory(design.mode, design, self.platform, max_b, self.spec.param_bytes + max_act)
        metrics = Metrics(thr=epochs / wall, mem=float(memory.peak_total), acc=evaluate(model, self.graph))
        logger.info(f"executed {design.mode.value} n={n}: thr={metrics.thr:.3f} ep/s acc={metrics.acc:.3f}")
        return ExecutionReport(
            metrics=metrics,
            memory=memory,
            within_capacity=memory.peak_total <= self.platform.gpu_mem_capacity,
            batch_bytes=max_b,
            activation_bytes=max_act,
            wall_time_s=wall,
            hit_rate=hit_rate(acc) if acc.total else None,
            loss_curve=[float(np.mean(losses[e])) for e in sorted(losses)],
        )


def profile_stage_costs(g: Graph, design: DesignValues, platform: PlatformSpec, probe_iters: int,
                        spec: ModelSpec, fanouts: Sequence[int], seed: int = 0) -> StageCosts:
    return PipelineService(g, platform, spec, fanouts, seed).profile_stage_costs(design, probe_iters).costs


def execute_pipeline(g: Graph, design: DesignValues, platform: PlatformSpec, spec: ModelSpec, epochs: int,
                     fanouts: Sequence[int], seed: int = 0, queue_capacity: int = 4) -> ExecutionReport:
    return PipelineService(g, platform, spec, fanouts, seed, queue_capacity).execute(design, epochs)
