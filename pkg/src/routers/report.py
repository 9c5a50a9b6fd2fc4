import argparse

from ..exceptions import EXIT_OK
from ..services.report_service import build_report
from .common import CommandRouter, config_errors

router = CommandRouter()


def arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("run_dir", help="Directory holding tune_trace.csv (and optionally bias_sweep.csv)")


@router.command("report", "Render charts and a summary from a run directory", arguments)
def report(args: argparse.Namespace) -> int:
    with config_errors():
        outcome = build_report(args.run_dir)
    for path in outcome.files:
        print(path)
    return EXIT_OK
