"""SVG charts and a text summary built purely from a run directory's CSV artifacts"""
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from ..exceptions import SchemaError  # noqa: E402
from ..models import KNOBS, Constraints, Metrics, ParallelMode  # noqa: E402
from . import csv_io  # noqa: E402
from .experiment_service import RESOLVED_CONFIG, load_experiment  # noqa: E402
from .tuner_service import non_dominated, violates_constraints  # noqa: E402

logger = logging.getLogger("gnn_autotune.report")

PARETO_SVG = "pareto.svg"
BIAS_SWEEP_SVG = "bias_sweep.svg"
SUMMARY_TXT = "summary.txt"

MODE_COLORS = {
    ParallelMode.SEQUENTIAL.value: "tab:blue",
    ParallelMode.MODE1.value: "tab:orange",
    ParallelMode.MODE2.value: "tab:green",
}

# fixed salt + no date keeps regenerated SVGs byte-identical
SVG_RC = {"svg.hashsalt": "gnn-autotune", "svg.fonttype": "none"}
SVG_METADATA = {"Date": None}


@dataclass(frozen=True)
class TracePoint:
    knobs: Tuple[str, ...]
    mode: str
    metrics: Metrics
    reward: float


@dataclass
class ReportOutcome:
    files: List[str]
    trace_points: int
    front: List[TracePoint]
    warnings: List[str]


def read_trace(path: str) -> List[TracePoint]:
    rows = csv_io.read_rows(path, csv_io.TUNE_TRACE_COLUMNS)
    points = []
    for row in rows:
        try:
            m = Metrics(thr=float(row["thr"]), mem=float(row["mem"]), acc=float(row["acc"]))
            r = float(row["reward"])
        except ValueError as e:
            raise SchemaError(f"{path}: step {row.get('step')}: {e}") from e
        points.append(TracePoint(tuple(row[k] for k in KNOBS), row["mode"], m, r))
    return points


def read_front(path: str) -> List[TracePoint]:
    rows = csv_io.read_rows(path, csv_io.METRICS_COLUMNS)
    return [TracePoint(tuple(row[k] for k in KNOBS), row["mode"],
                       Metrics(thr=float(row["thr_eps"]), mem=float(row["mem_bytes"]), acc=float(row["acc"])),
                       float("nan"))
            for row in rows]


def trace_front(points: List[TracePoint], constraints: Optional[Constraints] = None) -> List[TracePoint]:
    """Pareto front of the distinct trace points that satisfy the run's constraints, ascending memory"""
    distinct: Dict[Tuple[str, ...], TracePoint] = {}
    for p in points:
        if constraints is None or not violates_constraints(p.metrics, constraints):
            distinct.setdefault(p.knobs, p)
    items = list(distinct.values())
    front = [items[i] for i in non_dominated([p.metrics for p in items])]
    return sorted(front, key=lambda p: (p.metrics.mem, -p.metrics.thr, p.knobs))


def run_constraints(run_dir: str) -> Optional[Constraints]:
    """Constraints the run was tuned under; None when the directory has no resolved config"""
    path = os.path.join(run_dir, RESOLVED_CONFIG)
    if not os.path.exists(path):
        return None
    return load_experiment(path).tuner.constraints


def read_bias_sweep(path: str) -> List[Dict[str, Optional[float]]]:
    rows = csv_io.read_rows(path, csv_io.BIAS_SWEEP_COLUMNS)
    return [{k: (float(row[k]) if row[k] != "" else None) for k in csv_io.BIAS_SWEEP_COLUMNS} for row in rows]


def _placeholder(ax, message: str) -> None:
    ax.text(0.5, 0.5, message, ha="center", va="center", transform=ax.transAxes)
    ax.set_xticks([])
    ax.set_yticks([])


def plot_pareto(points: List[TracePoint], front: List[TracePoint], path: str) -> None:
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(6.4, 4.8))
        if not points:
            _placeholder(ax, "no evaluations in trace")
        else:
            for mode, color in MODE_COLORS.items():
                pts = [p for p in points if p.mode == mode]
                if pts:
                    ax.scatter([p.metrics.mem for p in pts], [p.metrics.thr for p in pts],
                               s=14, color=color, alpha=0.6, label=mode)
            if front:
                ax.plot([p.metrics.mem for p in front], [p.metrics.thr for p in front],
                        color="tab:red", marker="o", linewidth=1.2, label="pareto front")
            ax.set_xlabel("peak memory (bytes)")
            ax.set_ylabel("throughput (epochs/s)")
            ax.legend(loc="best")
        ax.set_title("design points by parallel mode")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata=SVG_METADATA)
        plt.close(fig)


def plot_bias_sweep(rows: List[Dict[str, Optional[float]]], path: str) -> None:
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(6.4, 4.8))
        if not rows:
            _placeholder(ax, "no bias sweep recorded")
        else:
            labels = [f"{r['bias_rate']:g}" for r in rows]
            ax.bar(labels, [r["hit_rate"] for r in rows], color="tab:blue", label="hit rate")
            ax.set_xlabel("bias rate")
            ax.set_ylabel("cache hit rate")
            ax.set_ylim(0.0, 1.0)
            accuracy = [r["accuracy"] for r in rows]
            if all(a is not None for a in accuracy):
                twin = ax.twinx()
                twin.plot(labels, accuracy, color="tab:orange", marker="o", label="accuracy")
                twin.set_ylabel("test accuracy")
                twin.set_ylim(0.0, 1.0)
        ax.set_title("hit rate versus bias rate")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata=SVG_METADATA)
        plt.close(fig)


def summarize(points: List[TracePoint], front: List[TracePoint],
              sweep: List[Dict[str, Optional[float]]]) -> str:
    lines = [f"evaluations in trace: {len(points)}",
             f"distinct design points: {len({p.knobs for p in points})}"]
    if points:
        best = max(points, key=lambda p: p.reward)
        lines.append(f"best reward: {best.reward!r} at {dict(zip(KNOBS, best.knobs))}")
    if front:
        t_star = max(front, key=lambda p: (p.metrics.thr, -p.metrics.mem))
        m_star = min(front, key=lambda p: (p.metrics.mem, -p.metrics.thr))
        lines.append(f"pareto front size: {len(front)}")
        lines.append(f"modes on front: {', '.join(sorted({p.mode for p in front}))}")
        lines.append(f"throughput-first: thr={t_star.metrics.thr!r} mem={t_star.metrics.mem!r} "
                     f"acc={t_star.metrics.acc!r} {dict(zip(KNOBS, t_star.knobs))}")
        lines.append(f"memory-first: thr={m_star.metrics.thr!r} mem={m_star.metrics.mem!r} "
                     f"acc={m_star.metrics.acc!r} {dict(zip(KNOBS, m_star.knobs))}")
    if sweep:
        lines.append("bias sweep (bias_rate, hit_rate, accuracy, dedup_ratio):")
        for r in sweep:
            lines.append(f"  {r['bias_rate']:g} {r['hit_rate']!r} {r['accuracy']!r} {r['dedup_ratio']!r}")
        base = sweep[0]["hit_rate"]
        if base:
            lines.append(f"hit rate gain over first bias rate: {sweep[-1]['hit_rate'] / base - 1.0:.4f}")
    return "\n".join(lines) + "\n"


def build_report(run_dir: str, trace_name: str = "tune_trace.csv", front_name: str = "pareto.csv",
                 sweep_name: str = "bias_sweep.csv") -> ReportOutcome:
    trace_path = os.path.join(run_dir, trace_name)
    if not os.path.exists(trace_path):
        raise SchemaError(f"{trace_path}: trace file not found")
    warnings = []
    points = read_trace(trace_path)
    if not points:
        warnings.append(f"{trace_path} has no rows; writing an empty placeholder plot")
        logger.warning(warnings[-1])
    front_path = os.path.join(run_dir, front_name)
    front = read_front(front_path) if os.path.exists(front_path) else trace_front(points, run_constraints(run_dir))

    sweep_path = os.path.join(run_dir, sweep_name)
    sweep = read_bias_sweep(sweep_path) if os.path.exists(sweep_path) else []

    files = [os.path.join(run_dir, PARETO_SVG), os.path.join(run_dir, BIAS_SWEEP_SVG),
             os.path.join(run_dir, SUMMARY_TXT)]
    plot_pareto(points, front, files[0])
    plot_bias_sweep(sweep, files[1])
    with open(files[2], "w") as fh:
        fh.write(summarize(points, front, sweep))
    logger.info(f"report written to {run_dir}")
    return ReportOutcome(files=files, trace_points=len(points), front=front, warnings=warnings)
