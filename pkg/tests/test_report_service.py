import os

import pytest

from src.models import (
    Constraints,
    DesignValues,
    ExperimentConfig,
    Metrics,
    ParallelMode,
    SamplingDevice,
    TunerConfig,
)
from src.services import csv_io
from src.services.experiment_service import RESOLVED_CONFIG, dump_experiment
from src.services.report_service import SUMMARY_TXT, build_report, read_trace, run_constraints, trace_front


def values(batch_size: int) -> DesignValues:
    return DesignValues(batch_size=batch_size, partitions=1, bias_rate=1.0, sampling_device=SamplingDevice.CPU,
                        workers=2, cache_volume=0, mode=ParallelMode.MODE1)


def write_trace(path, rows):
    """rows of (batch_size, Metrics, reward)"""
    lines = []
    for step, (batch, m, reward) in enumerate(rows):
        lines.append([step] + csv_io.design_cells(values(batch)) + list(m.as_tuple()) + [reward, reward])
    csv_io.write_rows(str(path), csv_io.TUNE_TRACE_COLUMNS, lines)


@pytest.fixture
def constrained_run(tmp_path):
    config = ExperimentConfig(tuner=TunerConfig(penalty=-5.0, constraints=Constraints(mem_max=100.0)))
    dump_experiment(config, str(tmp_path / RESOLVED_CONFIG))
    write_trace(tmp_path / "tune_trace.csv", [
        (64, Metrics(thr=10.0, mem=500.0, acc=0.95), -5.0),
        (128, Metrics(thr=5.0, mem=50.0, acc=0.9), 0.4),
    ])
    return tmp_path


def test_trace_front_drops_constraint_violations(constrained_run):
    points = read_trace(str(constrained_run / "tune_trace.csv"))
    assert len(trace_front(points)) == 2
    front = trace_front(points, Constraints(mem_max=100.0))
    assert [p.knobs[0] for p in front] == ["128"]
    assert trace_front(points, Constraints(acc_min=0.92))[0].knobs[0] == "64"


def test_report_recovers_front_from_resolved_config(constrained_run):
    assert run_constraints(str(constrained_run)) == Constraints(mem_max=100.0)
    outcome = build_report(str(constrained_run))
    assert outcome.trace_points == 2
    assert [p.knobs[0] for p in outcome.front] == ["128"]
    with open(constrained_run / SUMMARY_TXT) as fh:
        assert "pareto front size: 1" in fh.read()


def test_report_without_resolved_config_keeps_every_point(constrained_run):
    os.remove(constrained_run / RESOLVED_CONFIG)
    assert run_constraints(str(constrained_run)) is None
    assert len(build_report(str(constrained_run)).front) == 2
