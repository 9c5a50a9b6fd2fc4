import itertools
import os
from enum import Enum
from typing import Dict, Iterator, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator, model_validator

from .config import settings
from .exceptions import ConfigurationError

BYTES_PER_VALUE = 4  # float32 features / weights, u32 indices


class ParallelMode(str, Enum):
    SEQUENTIAL = "sequential"
    MODE1 = "p-mode1"
    MODE2 = "p-mode2"


class SamplingDevice(str, Enum):
    CPU = "cpu"
    GPU = "gpu"


class PartitionMethod(str, Enum):
    HASH = "hash"
    BFS_BALANCED = "bfs-balanced"


class SamplingStrategy(str, Enum):
    WEIGHTED = "weighted"
    UNIFORM = "uniform"


class CachePolicy(str, Enum):
    OUT_DEGREE_HOTNESS = "out_degree_hotness"


class EvaluatorKind(str, Enum):
    EXECUTE = "execute"
    SIMULATE = "simulate"


class GraphGenerator(str, Enum):
    SBM = "sbm"
    POWER_LAW = "power-law"
    EDGE_LIST = "edge-list"
    FILE = "file"


# ---------------------------------------------------------------- graphcore

class GraphStats(BaseModel):
    num_nodes: int = Field(..., ge=0)
    num_edges: int = Field(..., ge=0)
    density: float = Field(..., ge=0.0, le=1.0, description="num_edges / (n * (n - 1))")
    degree_mean: float = Field(..., ge=0.0)
    degree_max: float = Field(..., ge=0.0)


class PartitionStats(BaseModel):
    partition_id: int = Field(..., ge=0)
    eta: float = Field(..., gt=0.0, le=1.0, description="|core + halo| / |V|")
    core_size: int = Field(..., ge=0)
    halo_size: int = Field(..., ge=0)


# ---------------------------------------------------------------- sampler / cache

class SamplerConfig(BaseModel):
    fanouts: List[int] = Field(default=[10, 5], description="Per-hop neighbor caps, seeds' hop first")
    bias_rate: float = Field(default=1.0, ge=1.0, description="Weight of cached neighbors; 1 = uniform")
    rng_seed: int = Field(default=0)
    strategy: SamplingStrategy = Field(default=SamplingStrategy.WEIGHTED)

    @field_validator("fanouts")
    @classmethod
    def _fanouts_positive(cls, v: List[int]) -> List[int]:
        if not v or any(f < 1 for f in v):
            raise ValueError("every fanout must be >= 1")
        return v


class CacheConfig(BaseModel):
    volume_bytes: int = Field(default=0, ge=0, description="Per-device cache budget")
    num_devices: int = Field(default=1, ge=1)
    policy: CachePolicy = Field(default=CachePolicy.OUT_DEGREE_HOTNESS)


class BatchStats(BaseModel):
    batch_bytes: int = Field(..., ge=0)
    num_nodes: int = Field(..., ge=0)
    num_edges: int = Field(..., ge=0)


# ---------------------------------------------------------------- microtrain

class ModelSpec(BaseModel):
    feat_dim: int = Field(default=16, ge=1)
    hidden_dim: int = Field(default=16, ge=1)
    num_classes: int = Field(default=3, ge=1)
    num_layers: int = Field(default=2, ge=2, le=2)
    learning_rate: float = Field(default=0.5, ge=0.0)

    @computed_field
    @property
    def param_bytes(self) -> int:
        return (self.feat_dim * self.hidden_dim + self.hidden_dim * self.num_classes) * BYTES_PER_VALUE


class TrainReport(BaseModel):
    test_accuracy: float = Field(..., ge=0.0, le=1.0)
    epochs_run: int = Field(..., ge=0)
    loss_curve: List[float] = Field(default_factory=list)
    reference_accuracy: Optional[float] = None
    accuracy_drop: Optional[float] = None
    max_batch_bytes: int = 0
    activation_bytes: int = 0
    hit_rate: Optional[float] = None


# ---------------------------------------------------------------- pipeline

class StageLatency(BaseModel):
    sample: float = Field(default=0.0, ge=0.0)
    batch: float = Field(default=0.0, ge=0.0)
    train: float = Field(default=0.0, ge=0.0)


class PlatformSpec(BaseModel):
    num_gpus: int = Field(default=1, ge=1)
    gpu_mem_capacity: int = Field(default=10 * 1024**3, gt=0)
    cpu_sample_cost_multiplier: float = Field(default=1.0, gt=0.0)
    gpu_sample_cost_multiplier: float = Field(default=0.5, gt=0.0)
    runtime_overhead_bytes: int = Field(default=1_000_000, ge=0, description="Per worker context")
    stage_latency_s: StageLatency = Field(default_factory=StageLatency,
                                          description="Emulated fixed latency per stage and iteration")
    sample_cost_per_edge_s: float = Field(default=2e-6, ge=0.0)
    batch_cost_per_byte_s: float = Field(default=2e-9, ge=0.0)
    train_cost_per_flop_s: float = Field(default=5e-10, ge=0.0)

    def sample_multiplier(self, device: "SamplingDevice") -> float:
        if device == SamplingDevice.GPU:
            return self.gpu_sample_cost_multiplier
        return self.cpu_sample_cost_multiplier


class StageCosts(BaseModel):
    t_sample: float = Field(..., ge=0.0)
    t_batch: float = Field(..., ge=0.0)
    t_train: float = Field(..., ge=0.0)
    iters_per_epoch: int = Field(..., ge=1)


class PipelineConfig(BaseModel):
    mode: ParallelMode = Field(default=ParallelMode.SEQUENTIAL)
    workers: int = Field(default=1, ge=1)
    queue_capacity: int = Field(default=4, ge=1)

    @property
    def effective_workers(self) -> int:
        return 1 if self.mode == ParallelMode.SEQUENTIAL else self.workers


class MemoryEstimate(BaseModel):
    cache: int = Field(..., ge=0, description="Per-device cache volume")
    batch: int = Field(..., ge=0)
    model: int = Field(..., ge=0, description="Parameters plus activations")
    runtime: int = Field(..., ge=0)
    peak_total: int = Field(..., ge=0)
    total_cache: int = Field(..., ge=0, description="num_gpus * cache volume")


class Metrics(BaseModel):
    model_config = ConfigDict(frozen=True)

    thr: float = Field(..., description="Epochs per second")
    mem: float = Field(..., description="Peak bytes per device")
    acc: float = Field(..., description="Test accuracy")

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.thr, self.mem, self.acc)


# ---------------------------------------------------------------- design space

KNOBS: Tuple[str, ...] = (
    "batch_size", "partitions", "bias_rate", "sampling_device", "workers", "cache_volume", "mode",
)
CATEGORICAL_KNOBS = ("sampling_device", "mode")


class DesignPoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    indices: Tuple[int, ...] = Field(..., description="One grid index per knob, in KNOBS order")

    @field_validator("indices")
    @classmethod
    def _length(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if len(v) != len(KNOBS):
            raise ValueError(f"design point needs {len(KNOBS)} indices, got {len(v)}")
        return v


class DesignValues(BaseModel):
    model_config = ConfigDict(frozen=True)

    batch_size: int
    partitions: int
    bias_rate: float
    sampling_device: SamplingDevice
    workers: int
    cache_volume: int
    mode: ParallelMode


class DesignSpace(BaseModel):
    batch_size: List[int] = Field(default=[64, 128, 256, 512])
    partitions: List[int] = Field(default=[1])
    bias_rate: List[float] = Field(default=[1.0, 2.0, 4.0, 8.0, 16.0, 32.0])
    sampling_device: List[SamplingDevice] = Field(default=[SamplingDevice.CPU, SamplingDevice.GPU])
    workers: List[int] = Field(default=[1, 2, 4, 8])
    cache_volume: List[int] = Field(default=[0, 16_384, 65_536])
    mode: List[ParallelMode] = Field(default=list(ParallelMode))

    @model_validator(mode="after")
    def _check_grids(self) -> "DesignSpace":
        errors = []
        for knob in KNOBS:
            grid = getattr(self, knob)
            if not grid:
                errors.append(f"{knob}: grid must not be empty")
            elif knob not in CATEGORICAL_KNOBS and list(grid) != sorted(grid):
                errors.append(f"{knob}: grid must be sorted ascending")
        if any(b < 64 or b > 1024 for b in self.batch_size):
            errors.append("batch_size: levels must lie in [64, 1024]")
        if any(p < 1 for p in self.partitions):
            errors.append("partitions: levels must be >= 1")
        if any(g < 1 for g in self.bias_rate):
            errors.append("bias_rate: levels must be >= 1")
        if any(w < 1 for w in self.workers):
            errors.append("workers: levels must be >= 1")
        if any(c < 0 for c in self.cache_volume):
            errors.append("cache_volume: levels must be >= 0")
        if errors:
            raise ValueError("; ".join(errors))
        return self

    def sizes(self) -> Tuple[int, ...]:
        return tuple(len(getattr(self, k)) for k in KNOBS)

    def size(self) -> int:
        total = 1
        for s in self.sizes():
            total *= s
        return total

    def points(self) -> Iterator[DesignPoint]:
        """All points in lexicographic index order"""
        for idx in itertools.product(*(range(s) for s in self.sizes())):
            yield DesignPoint(indices=idx)

    def contains(self, point: DesignPoint) -> bool:
        return all(0 <= i < s for i, s in zip(point.indices, self.sizes()))

    def resolve(self, point: DesignPoint) -> DesignValues:
        if not self.contains(point):
            raise ConfigurationError(f"design point {point.indices} outside grid sizes {self.sizes()}")
        values = {k: getattr(self, k)[i] for k, i in zip(KNOBS, point.indices)}
        return DesignValues(**values)

    def locate(self, values: Dict[str, object]) -> DesignPoint:
        """Map knob values (missing knobs -> first level) back onto grid indices"""
        indices = []
        for knob in KNOBS:
            grid = getattr(self, knob)
            if knob not in values:
                indices.append(0)
                continue
            wanted = values[knob]
            normalized = [g.value if isinstance(g, Enum) else g for g in grid]
            wanted = wanted.value if isinstance(wanted, Enum) else wanted
            if wanted not in normalized:
                raise ConfigurationError(f"{knob}={wanted!r} is not a level of {normalized}")
            indices.append(normalized.index(wanted))
        return DesignPoint(indices=tuple(indices))


# ---------------------------------------------------------------- tuner

class PPOHyper(BaseModel):
    clip_epsilon: float = Field(default=0.2, gt=0.0, lt=1.0)
    discount: float = Field(default=0.9, ge=0.0, le=1.0)
    policy_lr: float = Field(default=0.05, gt=0.0)
    value_lr: float = Field(default=0.05, gt=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    rollout_length: int = Field(default=8, ge=1)
    epochs_per_update: int = Field(default=8, ge=1)
    hidden_units: int = Field(default=32, ge=1)
    normalize_advantages: bool = True
    entropy_coef: float = Field(default=0.0, ge=0.0)
    max_grad_norm: float = Field(default=1.0, gt=0.0, description="Global gradient-norm cap per network step")


class Constraints(BaseModel):
    mem_max: Optional[float] = Field(default=None, gt=0.0, description="Bytes")
    acc_min: Optional[float] = Field(default=None, ge=0.0, le=1.0)


class MetricRanges(BaseModel):
    thr: Tuple[float, float] = (0.0, 1.0)
    mem: Tuple[float, float] = (0.0, float(10 * 1024**3))
    acc: Tuple[float, float] = (0.0, 1.0)

    @model_validator(mode="after")
    def _ordered(self) -> "MetricRanges":
        for name in ("thr", "mem", "acc"):
            lo, hi = getattr(self, name)
            if hi <= lo:
                raise ValueError(f"{name}: reference range must satisfy lo < hi")
        return self


class TunerConfig(BaseModel):
    weights: Tuple[float, float, float] = Field(default=(1.0, -0.5, 1.0),
                                                description="Priority vector over [thr, mem, acc]")
    constraints: Constraints = Field(default_factory=Constraints)
    ranges: MetricRanges = Field(default_factory=MetricRanges)
    budget: int = Field(default=200, ge=1, description="Distinct evaluations")
    patience: int = Field(default=20, ge=1, description="Evaluations without improvement before stopping")
    penalty: float = Field(default=-1000.0)
    ppo: PPOHyper = Field(default_factory=PPOHyper)
    recheck_limit: int = Field(default=10, ge=1, description="Candidates re-evaluated against ground truth")
    planted_optimum: Optional[Dict[str, object]] = Field(
        default=None, description="Knob values of a synthetic optimum; replaces surrogate and ground truth")


# ---------------------------------------------------------------- surrogate

class SurrogateHyper(BaseModel):
    trees: int = Field(default=100, ge=1)
    depth: int = Field(default=4, ge=1)
    shrinkage: float = Field(default=0.1, gt=0.0, le=1.0)
    min_samples_leaf: int = Field(default=1, ge=1)


class SurrogateSettings(BaseModel):
    samples: int = Field(default=200, ge=1)
    evaluator: EvaluatorKind = Field(default=EvaluatorKind.SIMULATE)
    hyper: SurrogateHyper = Field(default_factory=SurrogateHyper)
    test_fraction: float = Field(default=0.2, ge=0.0, lt=1.0)
    accuracy_epochs: int = Field(default=2, ge=0, description="Micro-training epochs behind simulated accuracy")


# ---------------------------------------------------------------- experiment

class GraphSource(BaseModel):
    generator: GraphGenerator = Field(default=GraphGenerator.SBM)
    path: Optional[str] = Field(default=None, description="Binary graph or edge list")
    n_nodes: int = Field(default=300, ge=1)
    n_blocks: int = Field(default=3, ge=1)
    p_in: float = Field(default=0.3, ge=0.0, le=1.0)
    p_out: float = Field(default=0.01, ge=0.0, le=1.0)
    min_degree: int = Field(default=2, ge=1)
    exponent: float = Field(default=2.5)
    feat_dim: int = Field(default=16, ge=1)
    num_classes: int = Field(default=3, ge=1)

    @model_validator(mode="after")
    def _path_exists(self) -> "GraphSource":
        if self.generator in (GraphGenerator.FILE, GraphGenerator.EDGE_LIST):
            if not self.path:
                raise ValueError(f"graph.path is required for generator {self.generator.value}")
            if not os.path.exists(self.path):
                raise ValueError(f"graph.path {self.path!r} does not exist")
        return self


class BiasSweepSettings(BaseModel):
    gammas: List[float] = Field(default=[1.0, 2.0, 4.0, 8.0, 16.0])
    cache_fraction: float = Field(default=0.1, ge=0.0, le=1.0)
    epochs: int = Field(default=5, ge=1)
    batch_size: int = Field(default=64, ge=1)
    train_epochs: int = Field(default=0, ge=0, description="0 skips the accuracy column")


class ExperimentConfig(BaseModel):
    name: str = Field(default="experiment")
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED)
    output_dir: Optional[str] = Field(default=None, description="Defaults to <output root>/<name>")
    graph: GraphSource = Field(default_factory=GraphSource)
    platform: PlatformSpec = Field(default_factory=PlatformSpec)
    design_space: DesignSpace = Field(default_factory=DesignSpace)
    model: ModelSpec = Field(default_factory=ModelSpec)
    fanouts: List[int] = Field(default=[10, 5])
    epochs: int = Field(default=3, ge=0)
    queue_capacity: int = Field(default=4, ge=1)
    probe_iters: int = Field(default=5, ge=3)
    profile_points: List[Dict[str, object]] = Field(default_factory=lambda: [{}])
    bias_sweep: Optional[BiasSweepSettings] = None
    surrogate: SurrogateSettings = Field(default_factory=SurrogateSettings)
    tuner: TunerConfig = Field(default_factory=TunerConfig)

    @model_validator(mode="after")
    def _cross_checks(self) -> "ExperimentConfig":
        errors = []
        if any(p > self.platform.num_gpus for p in self.design_space.partitions):
            errors.append("design_space.partitions: levels must lie in [1, platform.num_gpus]")
        if any(f < 1 for f in self.fanouts):
            errors.append("fanouts: every fanout must be >= 1")
        if self.model.feat_dim != self.graph.feat_dim and self.graph.generator != GraphGenerator.FILE:
            errors.append("model.feat_dim must equal graph.feat_dim")
        if self.tuner.budget < self.tuner.ppo.rollout_length:
            errors.append("tuner.budget must be >= tuner.ppo.rollout_length")
        if errors:
            raise ValueError("; ".join(errors))
        return self


class ExecutionReport(BaseModel):
    metrics: Metrics
    memory: MemoryEstimate
    within_capacity: bool = Field(..., description="peak_total <= gpu_mem_capacity")
    batch_bytes: int = Field(..., ge=0, description="Largest per-worker batch seen")
    activation_bytes: int = Field(..., ge=0)
    wall_time_s: float = Field(..., ge=0.0)
    hit_rate: Optional[float] = None
    loss_curve: List[float] = Field(default_factory=list)


class SurrogateContext(BaseModel):
    """Graph-level inputs shared by every design point of one experiment"""
    graph: GraphStats
    eta_by_partitions: Dict[int, float] = Field(default_factory=dict,
                                                description="Mean overlap ratio per partition count")

    def eta(self, partitions: int) -> float:
        return self.eta_by_partitions.get(partitions, 1.0)
