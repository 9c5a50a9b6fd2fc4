"""Evaluators map a design point to Metrics; all share the same call protocol"""
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Protocol, Sequence

from ..config import settings
from ..models import DesignPoint, DesignSpace, Metrics, SurrogateContext
from .pipeline_service import PipelineService
from .surrogate_service import SurrogateModel, predict

logger = logging.getLogger("gnn_autotune.evaluators")


class Evaluator(Protocol):
    def __call__(self, point: DesignPoint) -> Metrics:
        ...


class ExecuteEvaluator:
    """Ground truth from a real concurrent run"""

    def __init__(self, service: PipelineService, space: DesignSpace, epochs: int):
        self.service = service
        self.space = space
        self.epochs = epochs

    def __call__(self, point: DesignPoint) -> Metrics:
        return self.service.execute(self.space.resolve(point), self.epochs).metrics


class SimulateEvaluator:
    """Deterministic ground truth: count-based stage costs through the event simulator"""

    def __init__(self, service: PipelineService, space: DesignSpace, accuracy_epochs: int = 2):
        self.service = service
        self.space = space
        self.accuracy_epochs = accuracy_epochs

    def __call__(self, point: DesignPoint) -> Metrics:
        return self.service.simulate(self.space.resolve(point), self.accuracy_epochs)[0]


class SurrogateEvaluator:
    def __init__(self, model: SurrogateModel, ctx: SurrogateContext):
        self.model = model
        self.ctx = ctx

    def __call__(self, point: DesignPoint) -> Metrics:
        return predict(self.model, point, self.ctx)


class PlantedEvaluator:
    """Synthetic landscape peaking at one planted point.

    thr = 1 - L1(point, planted) / max L1 over the space; mem and acc are constant.
    """

    def __init__(self, space: DesignSpace, planted: DesignPoint, mem: float = 0.0, acc: float = 1.0):
        self.space = space
        self.planted = planted
        self.mem = mem
        self.acc = acc
        self.max_distance = max(1, sum(s - 1 for s in space.sizes()))

    def __call__(self, point: DesignPoint) -> Metrics:
        d = sum(abs(a - b) for a, b in zip(point.indices, self.planted.indices))
        return Metrics(thr=1.0 - d / self.max_distance, mem=self.mem, acc=self.acc)


class MemoizedEvaluator:
    """Counts distinct points; repeated points are served from memory"""

    def __init__(self, inner: Evaluator, workers: Optional[int] = None):
        self.inner = inner
        self.workers = workers or settings.EVALUATION_WORKERS
        self._memo: Dict[DesignPoint, Metrics] = {}
        self._lock = threading.Lock()

    @property
    def evaluations(self) -> int:
        return len(self._memo)

    def __call__(self, point: DesignPoint) -> Metrics:
        with self._lock:
            if point in self._memo:
                return self._memo[point]
        m = self.inner(point)
        with self._lock:
            self._memo.setdefault(point, m)
            return self._memo[point]

    def evaluate_many(self, points: Sequence[DesignPoint]) -> List[Metrics]:
        """Results in submission order regardless of completion order"""
        if self.workers <= 1 or len(points) <= 1:
            return [self(p) for p in points]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(self, points))
