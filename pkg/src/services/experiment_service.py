"""Wires one ExperimentConfig into graph, pipeline, surrogate and tuner runs and writes the artifacts"""
import json
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import yaml

from ..config import settings
from ..exceptions import ConfigurationError
from ..models import (
    KNOBS,
    DesignPoint,
    DesignValues,
    EvaluatorKind,
    ExecutionReport,
    ExperimentConfig,
    Metrics,
    SamplerConfig,
    SurrogateContext,
)
from . import csv_io
from .cache_service import cache_for_fraction, write_cache_manifest
from .evaluators import (
    Evaluator,
    ExecuteEvaluator,
    MemoizedEvaluator,
    PlantedEvaluator,
    SimulateEvaluator,
    SurrogateEvaluator,
)
from .graph_service import Graph, build_graph, graph_stats
from .pipeline_service import CostProbe, PipelineService, SimulationResult
from .sampler_service import BiasSweepPoint, bias_sweep
from .surrogate_service import (
    SurrogateModel,
    collect_profile_dataset,
    evaluate_surrogate,
    fit_surrogate,
    load_surrogate,
    save_surrogate,
    train_test_split,
)
from .train_service import train
from .tuner_service import GridResult, Recommendation, TuneResult, TunerService, grid_search, pareto_extremes

logger = logging.getLogger("gnn_autotune.experiment")

RESOLVED_CONFIG = "experiment.resolved.yaml"
RECOMMENDED_CONFIG = "recommended.yaml"
METRICS_CSV = "metrics.csv"
STAGE_COSTS_CSV = "stage_costs.csv"
BIAS_SWEEP_CSV = "bias_sweep.csv"
CACHE_MANIFEST_CSV = "cache_manifest.csv"
SIMULATED_METRICS_CSV = "simulated_metrics.csv"
SIMULATED_STAGE_COSTS_CSV = "simulated_stage_costs.csv"
DATASET_CSV = "dataset.csv"
SURROGATE_JSON = "surrogate.json"
SURROGATE_QUALITY_JSON = "surrogate_quality.json"
TUNE_TRACE_CSV = "tune_trace.csv"
PARETO_CSV = "pareto.csv"
TUNE_SUMMARY_JSON = "tune_summary.json"


def read_experiment(path: str) -> Dict:
    """Raw YAML mapping, before defaults and validation"""
    with open(path, "r") as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return raw


def load_experiment(path: str) -> ExperimentConfig:
    """YAML file -> validated config; validation errors propagate as pydantic ValidationError"""
    return ExperimentConfig.model_validate(read_experiment(path))


def dump_experiment(config: ExperimentConfig, path: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        yaml.safe_dump(config.model_dump(mode="json"), fh, sort_keys=False)


def stage_cost_row(values: DesignValues, probe: CostProbe) -> List:
    c = probe.costs
    return csv_io.design_cells(values) + [repr(c.t_sample), repr(c.t_batch), repr(c.t_train), c.iters_per_epoch]


@dataclass
class ProfileOutcome:
    reports: List[Tuple[DesignValues, CostProbe, ExecutionReport]]
    sweep: List[BiasSweepPoint]


@dataclass
class TuneOutcome:
    result: TuneResult
    recommendation: Optional[Recommendation]
    grid: Optional[GridResult] = None


class ExperimentService:
    def __init__(self, config: ExperimentConfig, output_dir: Optional[str] = None):
        self.config = config
        self.output_dir = output_dir or config.output_dir or os.path.join(settings.OUTPUT_ROOT, config.name)
        os.makedirs(self.output_dir, exist_ok=True)
        self._graph: Optional[Graph] = None
        self._pipeline: Optional[PipelineService] = None

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    @property
    def space(self):
        return self.config.design_space

    @property
    def graph(self) -> Graph:
        if self._graph is None:
            self._graph = build_graph(self.config.graph, self.config.seed)
            logger.info(f"graph: {self._graph.num_nodes} nodes, {self._graph.num_edges} edges")
        return self._graph

    @property
    def pipeline(self) -> PipelineService:
        if self._pipeline is None:
            c = self.config
            self._pipeline = PipelineService(self.graph, c.platform, c.model, c.fanouts, seed=c.seed,
                                             queue_capacity=c.queue_capacity)
        return self._pipeline

    def write_resolved_config(self) -> str:
        path = self.path(RESOLVED_CONFIG)
        dump_experiment(self.config, path)
        return path

    def context(self) -> SurrogateContext:
        etas = {u: float(np.mean([p.eta for p in self.pipeline.partitions(u)])) for u in self.space.partitions}
        return SurrogateContext(graph=graph_stats(self.graph), eta_by_partitions=etas)

    def profile_points(self) -> List[DesignPoint]:
        return [self.space.locate(values) for values in self.config.profile_points]

    def ground_truth(self, kind: Optional[EvaluatorKind] = None) -> Evaluator:
        kind = kind or self.config.surrogate.evaluator
        if kind == EvaluatorKind.EXECUTE:
            return ExecuteEvaluator(self.pipeline, self.space, max(1, self.config.epochs))
        return SimulateEvaluator(self.pipeline, self.space, self.config.surrogate.accuracy_epochs)

    # ------------------------------------------------------------ commands

    def profile(self) -> ProfileOutcome:
        c = self.config
        reports = []
        for point in self.profile_points():
            values = self.space.resolve(point)
            probe = self.pipeline.profile_stage_costs(values, c.probe_iters)
            report = self.pipeline.execute(values, max(1, c.epochs))
            logger.info(f"profiled {csv_io.design_cells(values)}: thr={report.metrics.thr:.3f} "
                        f"mem={report.metrics.mem:.0f} acc={report.metrics.acc:.3f}")
            reports.append((values, probe, report))
        csv_io.write_rows(self.path(METRICS_CSV), csv_io.METRICS_COLUMNS,
                          [csv_io.metrics_row(v, r.metrics) for v, _, r in reports])
        csv_io.write_rows(self.path(STAGE_COSTS_CSV), KNOBS + csv_io.STAGE_COST_COLUMNS,
                          [stage_cost_row(v, p) for v, p, _ in reports])
        sweep = self.run_bias_sweep() if c.bias_sweep is not None else []
        return ProfileOutcome(reports, sweep)

    def run_bias_sweep(self) -> List[BiasSweepPoint]:
        s = self.config.bias_sweep
        g = self.graph
        cache = cache_for_fraction(g, s.cache_fraction)
        write_cache_manifest(cache, self.path(CACHE_MANIFEST_CSV))
        points = bias_sweep(g, cache, self.config.fanouts, s.gammas, s.epochs, s.batch_size, self.config.seed)
        rows = []
        for p in points:
            accuracy = ""
            if s.train_epochs > 0:
                cfg = SamplerConfig(fanouts=self.config.fanouts, bias_rate=p.bias_rate, rng_seed=self.config.seed)
                report = train(g, self.config.model, cfg, cache, s.batch_size, s.train_epochs, seed=self.config.seed)
                accuracy = repr(report.test_accuracy)
            rows.append([repr(float(p.bias_rate)), repr(p.hit_rate), accuracy, repr(p.dedup_ratio)])
        csv_io.write_rows(self.path(BIAS_SWEEP_CSV), csv_io.BIAS_SWEEP_COLUMNS, rows)
        if len(points) > 1 and points[0].hit_rate > 0:
            gain = points[-1].hit_rate / points[0].hit_rate - 1.0
            logger.info(f"bias sweep: hit rate gain {gain:.1%} from gamma={points[0].bias_rate} "
                        f"to gamma={points[-1].bias_rate}")
        return points

    def simulate(self) -> List[Tuple[DesignValues, Metrics, SimulationResult, CostProbe]]:
        out = []
        for i, point in enumerate(self.profile_points()):
            values = self.space.resolve(point)
            metrics, result, probe = self.pipeline.simulate(values, self.config.surrogate.accuracy_epochs)
            csv_io.write_rows(self.path(f"event_trace_{i}.csv"), csv_io.EVENT_TRACE_COLUMNS,
                              [[repr(e.time), e.worker, e.stage, e.iteration, e.event] for e in result.trace])
            out.append((values, metrics, result, probe))
        csv_io.write_rows(self.path(SIMULATED_METRICS_CSV), csv_io.METRICS_COLUMNS,
                          [csv_io.metrics_row(v, m) for v, m, _, _ in out])
        csv_io.write_rows(self.path(SIMULATED_STAGE_COSTS_CSV), KNOBS + csv_io.STAGE_COST_COLUMNS,
                          [stage_cost_row(v, p) for v, _, _, p in out])
        return out

    def fit_surrogate(self) -> Tuple[SurrogateModel, Dict[str, Optional[float]]]:
        s = self.config.surrogate
        truth = MemoizedEvaluator(self.ground_truth())
        dataset = collect_profile_dataset(self.space, truth, self.context(), s.samples, self.config.seed)
        dataset.write_csv(self.path(DATASET_CSV))
        if s.test_fraction > 0.0 and len(dataset) >= 10:
            train_set, test_set = train_test_split(dataset, s.test_fraction, self.config.seed)
        else:
            train_set, test_set = dataset, None
        model = fit_surrogate(train_set, s.hyper, self.space)
        quality = evaluate_surrogate(model, test_set) if test_set is not None and len(test_set) else {}
        save_surrogate(model, self.path(SURROGATE_JSON))
        with open(self.path(SURROGATE_QUALITY_JSON), "w") as fh:
            json.dump({"train_rows": len(train_set), "test_rows": len(test_set) if test_set else 0,
                       "skipped": dataset.skipped, "r2": quality}, fh, indent=2)
        logger.info(f"surrogate held-out R2: {quality}")
        return model, quality

    def surrogate(self) -> SurrogateModel:
        path = self.path(SURROGATE_JSON)
        if os.path.exists(path):
            logger.info(f"reusing surrogate {path}")
            return load_surrogate(path)
        return self.fit_surrogate()[0]

    def tune(self) -> TuneOutcome:
        c = self.config
        service = TunerService(self.space, c.tuner, c.seed)
        if c.tuner.planted_optimum is not None:
            planted = PlantedEvaluator(self.space, self.space.locate(c.tuner.planted_optimum))
            result, rec = service.recommend(planted, planted)
            outcome = TuneOutcome(result, rec, grid_search(self.space, planted, c.tuner))
        else:
            predicted = SurrogateEvaluator(self.surrogate(), self.context())
            result, rec = service.recommend(predicted, MemoizedEvaluator(self.ground_truth()))
            outcome = TuneOutcome(result, rec)
        self.write_tune_artifacts(service, outcome)
        return outcome

    def write_tune_artifacts(self, service: TunerService, outcome: TuneOutcome) -> None:
        result, rec = outcome.result, outcome.recommendation
        service.write_trace(result, self.path(TUNE_TRACE_CSV))
        service.write_front(result.pareto_front, self.path(PARETO_CSV))
        summary: Dict[str, object] = {
            "feasible": rec is not None,
            "evaluations": result.evaluations,
            "evaluations_to_best": result.evaluations_to_best,
            "best_reward": result.best_reward,
        }
        if result.pareto_front:
            (t_point, t_m), (m_point, m_m) = pareto_extremes(result.pareto_front)
            summary["throughput_first"] = {"point": list(t_point.indices), "metrics": t_m.model_dump()}
            summary["memory_first"] = {"point": list(m_point.indices), "metrics": m_m.model_dump()}
        if outcome.grid is not None:
            summary["grid"] = {"point": list(outcome.grid.best_point.indices) if outcome.grid.feasible else None,
                               "reward": outcome.grid.best_reward, "evaluations": outcome.grid.evaluations}
        if rec is not None:
            values = self.space.resolve(rec.point)
            summary["recommended"] = {
                "point": list(rec.point.indices),
                "values": values.model_dump(mode="json"),
                "predicted": rec.predicted.model_dump(),
                "measured": rec.measured.model_dump(),
                "disagreement": rec.disagreement,
                "candidates_checked": rec.candidates_checked,
            }
            dump_experiment(self.recommended_config(values), self.path(RECOMMENDED_CONFIG))
        with open(self.path(TUNE_SUMMARY_JSON), "w") as fh:
            json.dump(summary, fh, indent=2)

    def recommended_config(self, values: DesignValues) -> ExperimentConfig:
        """The input experiment narrowed to the recommended point"""
        chosen = values.model_dump(mode="json")
        narrowed = self.space.model_copy(update={k: [getattr(values, k)] for k in KNOBS})
        return self.config.model_copy(update={
            "name": f"{self.config.name}-recommended",
            "output_dir": None,
            "design_space": narrowed,
            "profile_points": [chosen],
            "tuner": self.config.tuner.model_copy(update={"planted_optimum": None}),
        })
