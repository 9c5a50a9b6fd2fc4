"""CSV schemas shared by every command that writes or reads run artifacts"""
import csv
import os
from typing import Dict, Iterable, List, Sequence

from ..exceptions import SchemaError
from ..models import KNOBS, DesignValues, Metrics

METRIC_COLUMNS = ("thr_eps", "mem_bytes", "acc")
METRICS_COLUMNS = KNOBS + METRIC_COLUMNS
EVENT_TRACE_COLUMNS = ("time", "worker", "stage", "iteration", "event")
TUNE_TRACE_COLUMNS = ("step",) + KNOBS + ("thr", "mem", "acc", "reward", "best_so_far")
CACHE_MANIFEST_COLUMNS = ("node_id", "device_id")
STAGE_COST_COLUMNS = ("t_sample", "t_batch", "t_train", "iters_per_epoch")
BIAS_SWEEP_COLUMNS = ("bias_rate", "hit_rate", "accuracy", "dedup_ratio")


def write_rows(path: str, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(row)


def read_rows(path: str, required: Sequence[str]) -> List[Dict[str, str]]:
    with open(path, "r", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        return list(reader)


def design_cells(values: DesignValues) -> List:
    cells = []
    for knob in KNOBS:
        v = getattr(values, knob)
        cells.append(v.value if hasattr(v, "value") else v)
    return cells


def metrics_row(values: DesignValues, metrics: Metrics) -> List:
    return design_cells(values) + [repr(float(m)) for m in metrics.as_tuple()]
