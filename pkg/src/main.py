import argparse
import logging
import sys
from typing import List, Optional

from .config import settings
from .exceptions import EXIT_INTERNAL, CommandError
from .middleware.logging import LoggingMiddleware, configure_logging
from .routers import fit_surrogate, gen_graph, profile, report, simulate, tune

logger = logging.getLogger("gnn_autotune")

ROUTERS = [gen_graph.router, profile.router, simulate.router, fit_surrogate.router, tune.router, report.router]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gnn-autotune",
        description="Sampling, caching, pipeline scheduling and auto-tuning for GNN training",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for router in ROUTERS:
        for command in router.commands:
            sub = subparsers.add_parser(command.name, help=command.help)
            command.arguments(sub)
            sub.set_defaults(handler=command.handler)
    return parser


def run_command(args: argparse.Namespace) -> int:
    try:
        return args.handler(args)
    except CommandError as e:
        print(f"error: {e.detail}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception(f"{args.command} crashed")
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


def main(argv: Optional[List[str]] = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    logger.debug(f"environment={settings.ENVIRONMENT} output_root={settings.OUTPUT_ROOT}")
    return LoggingMiddleware().dispatch(args.command, run_command, args)


if __name__ == "__main__":
    sys.exit(main())
