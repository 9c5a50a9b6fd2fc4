import argparse

from ..exceptions import EXIT_OK
from ..services.experiment_service import SIMULATED_METRICS_CSV
from .common import CommandRouter, add_experiment_arguments, config_errors, open_experiment

router = CommandRouter()


@router.command("simulate", "Replay configured design points through the pipeline simulator",
                add_experiment_arguments)
def simulate(args: argparse.Namespace) -> int:
    service = open_experiment(args)
    with config_errors():
        runs = service.simulate()
    for values, metrics, result, _ in runs:
        print(f"{values.mode.value} workers={values.workers}: makespan={result.makespan:.6f} "
              f"max_queue={result.max_queue_depth} thr={metrics.thr:.4f} mem={metrics.mem:.0f}")
    print(service.path(SIMULATED_METRICS_CSV))
    return EXIT_OK
