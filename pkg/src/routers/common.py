"""Subcommand registration and the config plumbing every experiment command shares"""
import argparse
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import yaml
from pydantic import ValidationError

from ..exceptions import EXIT_CONFIG, AutotuneError, CommandError
from ..models import ExperimentConfig
from ..services.experiment_service import ExperimentService, read_experiment

Handler = Callable[[argparse.Namespace], int]


@dataclass
class Command:
    name: str
    help: str
    arguments: Callable[[argparse.ArgumentParser], None]
    handler: Handler


class CommandRouter:
    def __init__(self):
        self.commands: List[Command] = []

    def command(self, name: str, help: str, arguments: Callable[[argparse.ArgumentParser], None]):
        def decorator(fn: Handler) -> Handler:
            self.commands.append(Command(name, help, arguments, fn))
            return fn
        return decorator


def format_validation_error(e: ValidationError) -> str:
    """One line per violation so every problem is reported at once"""
    lines = []
    for err in e.errors():
        loc = ".".join(str(part) for part in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "invalid experiment config:\n  " + "\n  ".join(lines)


@contextmanager
def config_errors():
    """Map user-fixable failures onto the config exit code"""
    try:
        yield
    except ValidationError as e:
        raise CommandError(EXIT_CONFIG, format_validation_error(e)) from e
    except yaml.YAMLError as e:
        raise CommandError(EXIT_CONFIG, f"config is not valid YAML: {e}") from e
    except (AutotuneError, FileNotFoundError) as e:
        raise CommandError(EXIT_CONFIG, str(e)) from e


def add_experiment_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Experiment YAML file (defaults are used when omitted)")
    parser.add_argument("--seed", type=int, help="Override the global seed")
    parser.add_argument("--out", help="Output directory (defaults to <output root>/<name>)")


def parse_weights(text: str) -> List[float]:
    try:
        weights = [float(w) for w in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"weights must be three comma-separated numbers, got {text!r}")
    if len(weights) != 3:
        raise argparse.ArgumentTypeError(f"weights need exactly three entries, got {len(weights)}")
    return weights


def read_raw_config(path: Optional[str]) -> Dict:
    return read_experiment(path) if path else {}


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file plus flag overrides, validated as one document"""
    with config_errors():
        raw = read_raw_config(getattr(args, "config", None))
        if getattr(args, "seed", None) is not None:
            raw["seed"] = args.seed
        if getattr(args, "out", None):
            raw["output_dir"] = args.out
        tuner = dict(raw.get("tuner") or {})
        if getattr(args, "budget", None) is not None:
            tuner["budget"] = args.budget
        if getattr(args, "weights", None) is not None:
            tuner["weights"] = list(args.weights)
        if tuner:
            raw["tuner"] = tuner
        return ExperimentConfig.model_validate(raw)


def open_experiment(args: argparse.Namespace) -> ExperimentService:
    config = load_config(args)
    with config_errors():
        service = ExperimentService(config)
        service.write_resolved_config()
    return service
