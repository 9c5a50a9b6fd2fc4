import argparse

from ..exceptions import EXIT_INFEASIBLE, EXIT_OK, CommandError
from ..services.experiment_service import RECOMMENDED_CONFIG
from .common import CommandRouter, add_experiment_arguments, config_errors, open_experiment, parse_weights

router = CommandRouter()


def arguments(parser: argparse.ArgumentParser) -> None:
    add_experiment_arguments(parser)
    parser.add_argument("--budget", type=int, help="Distinct evaluations the tuner may spend")
    parser.add_argument("--weights", type=parse_weights, help="Priority over thr,mem,acc, e.g. 1,-0.5,1")


@router.command("tune", "Search the design space and recommend a configuration", arguments)
def tune(args: argparse.Namespace) -> int:
    service = open_experiment(args)
    with config_errors():
        outcome = service.tune()
    rec = outcome.recommendation
    if rec is None:
        raise CommandError(EXIT_INFEASIBLE,
                           f"no design point satisfies the constraints after {outcome.result.evaluations} evaluations")
    values = service.space.resolve(rec.point)
    print(f"recommended: {values.model_dump_json()}")
    print(f"predicted: {rec.predicted.model_dump_json()}")
    print(f"measured: {rec.measured.model_dump_json()}"
          f"{' (surrogate disagrees with ground truth)' if rec.disagreement else ''}")
    print(service.path(RECOMMENDED_CONFIG))
    return EXIT_OK
