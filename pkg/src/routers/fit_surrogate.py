import argparse

from ..exceptions import EXIT_OK
from ..services.experiment_service import SURROGATE_JSON
from .common import CommandRouter, add_experiment_arguments, config_errors, open_experiment

router = CommandRouter()


@router.command("fit-surrogate", "Collect a profile dataset and fit the performance surrogate",
                add_experiment_arguments)
def fit_surrogate(args: argparse.Namespace) -> int:
    service = open_experiment(args)
    with config_errors():
        _, quality = service.fit_surrogate()
    for metric, score in quality.items():
        print(f"held-out R2 {metric}: {'undefined' if score is None else f'{score:.4f}'}")
    print(service.path(SURROGATE_JSON))
    return EXIT_OK
