import argparse

from ..exceptions import EXIT_OK
from ..services.experiment_service import METRICS_CSV
from .common import CommandRouter, add_experiment_arguments, config_errors, open_experiment

router = CommandRouter()


@router.command("profile", "Profile stage costs and run each configured design point", add_experiment_arguments)
def profile(args: argparse.Namespace) -> int:
    service = open_experiment(args)
    with config_errors():
        outcome = service.profile()
    for values, probe, report in outcome.reports:
        c = probe.costs
        print(f"{values.mode.value} workers={values.workers} batch={values.batch_size}: "
              f"t_sample={c.t_sample:.6f} t_batch={c.t_batch:.6f} t_train={c.t_train:.6f} "
              f"thr={report.metrics.thr:.4f} mem={report.metrics.mem:.0f} acc={report.metrics.acc:.4f}"
              f"{'' if report.within_capacity else ' (exceeds device memory)'}")
    print(service.path(METRICS_CSV))
    return EXIT_OK
