import argparse
from pathlib import Path
import sys
from typing import Iterable, Optional, Sequence

from WindESN.config import ExperimentConfig, config_hash, load_config
from WindESN.errors import ConfigurationError, WindEsnError
from WindESN.manifest import write_manifest
from WindESN.parallel import resolve_threads

# ===================================================================
#  Command Base Class and Main Entry Point
# ===================================================================
COMMAND_REGISTRY = {}

# Canonical artifact names inside data.work_dir
WORK_FILES = {
    "harmonics": "harmonics.npz",
    "residuals": "residuals.wsf",
    "knots": "knots.csv",
    "covariance": "covariance.yaml",
    "cv": "cv_results.csv",
    "best_spec": "best_spec.yaml",
    "models": "models.npz",
    "forecast": "forecast.npz",
    "calibration": "calibration.npz",
    "evaluation": "evaluation.csv",
    "coverage": "coverage.csv",
    "power": "power.csv",
    "lorenz": "lorenz_study.csv",
    "periodogram": "periodogram.csv",
    "diagnostics": "diagnostics.csv",
    "cache": "cache",
}


# Decorator to add each command class to the Command Registry
def register_command(name):
    def decorator(cls):
        COMMAND_REGISTRY[name] = cls
        return cls

    return decorator


class Command:
    """Base class for all wind-esn commands."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self._config: Optional[ExperimentConfig] = None

    @staticmethod
    def add_arguments(parser: argparse.ArgumentParser):
        """Class-level method to add its specific arguments to the subparser."""
        raise NotImplementedError

    def execute(self):
        """Instance method to execute the command's logic."""
        raise NotImplementedError

    @property
    def config(self) -> ExperimentConfig:
        """Config file plus --set overrides plus --seed, resolved once."""
        if self._config is None:
            overrides = list(getattr(self.args, "set", None) or [])
            if getattr(self.args, "seed", None) is not None:
                overrides.append(f"seed={int(self.args.seed)}")
            path = getattr(self.args, "config", None)
            self._config = load_config(Path(path) if path else None, overrides)
        return self._config

    @property
    def base_dir(self) -> Path:
        """Relative paths in the config resolve against the config file's folder."""
        path = getattr(self.args, "config", None)
        return Path(path).resolve().parent if path else Path.cwd()

    @property
    def work_dir(self) -> Path:
        return self.resolve(self.config.data.work_dir)

    @property
    def threads(self) -> int:
        return resolve_threads(getattr(self.args, "threads", None))

    def resolve(self, path) -> Path:
        path = Path(path)
        return path if path.is_absolute() else self.base_dir / path

    def work_path(self, key: str, override: Optional[str] = None) -> Path:
        """An explicit path from the command line, else the canonical work_dir file."""
        if override:
            return Path(override)
        return self.work_dir / WORK_FILES[key]

    def field_path(self, override: Optional[str] = None) -> Path:
        if override:
            return Path(override)
        if not self.config.data.field:
            raise ConfigurationError("data.field is not set; pass the field path explicitly.")
        return self.resolve(self.config.data.field)

    def require(self, path: Path, what: str) -> Path:
        if not Path(path).exists():
            raise ConfigurationError(f"{what} {path} is missing.")
        return Path(path)

    def print_verbose(self, message: str):
        """Prints a message only if the --verbose flag is set."""
        if getattr(self.args, "verbose", False):
            print(message, flush=True)

    def write_manifest(self, output: Path, inputs: Iterable[Optional[Path]] = ()) -> Path:
        """Run manifest next to ``output``: config hash, seed, input hashes, versions."""
        args = {k: v for k, v in vars(self.args).items() if k != "handler_class"}
        return write_manifest(output, command=getattr(self.args, "command", type(self).__name__),
                              args=args, config_sha256=config_hash(self.config),
                              seed=self.config.seed, inputs=[p for p in inputs if p])


class IOCommand(Command):
    """Base class for commands that transform Input -> Output"""

    # work_dir artifact used when input / output are not given; None means the field
    input_key: Optional[str] = None
    output_key: str = ""

    @staticmethod
    def add_arguments(parser: argparse.ArgumentParser):
        # Define the standard args here once
        parser.add_argument("input", nargs="?", help="Source file path (default from config)")
        parser.add_argument("output", nargs="?", help="Destination file path (default in work_dir)")

    def execute(self):
        # Enforce standard checks before running specific logic
        if self.input_key is None:
            self.input_path = self.field_path(self.args.input)
        else:
            self.input_path = self.work_path(self.input_key, self.args.input)
        self.require(self.input_path, "Input")
        self.output_path = self.work_path(self.output_key, self.args.output)

        self.transform()  # Child classes implement this instead of execute()

    def transform(self):
        raise NotImplementedError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wind-esn",
        description="Dimensionally reduced echo state network forecasting for wind fields.",
        formatter_class=argparse.RawTextHelpFormatter
    )
    # Global flags shared by all commands
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="Enable verbose output for all commands."
    )
    parser.add_argument("--config", help="YAML experiment configuration.")
    parser.add_argument(
        "--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
        help="Override a config key (repeatable)."
    )
    parser.add_argument("--seed", type=int, help="Override the base seed.")
    parser.add_argument(
        "--threads", type=int, help="Worker threads (default $WIND_ESN_THREADS or 1)."
    )

    subparsers = parser.add_subparsers(
        dest="command", required=True, help="Available commands"
    )

    # Dynamically import and register the available commands
    from WindESN.commands import COMMANDS
    for name, command_class in COMMANDS.items():
        subparser = subparsers.add_parser(
            name, help=command_class.__doc__, formatter_class=argparse.RawTextHelpFormatter
        )
        command_class.add_arguments(subparser)
        subparser.set_defaults(handler_class=command_class)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parses command-line arguments and dispatches to the correct command class.

    Returns 0 on success, 2 for WindEsnError failures and 1 for anything else;
    failures print one ``ClassName: message`` line to stderr.
    """
    args = build_parser().parse_args(argv)

    # Instantiate the chosen command class with the parsed args and execute it
    command_instance = args.handler_class(args)

    try:
        command_instance.execute()
    except WindEsnError as e:
        _report(e)
        return 2
    except Exception as e:
        _report(e)
        return 1
    return 0


def _report(e: BaseException) -> None:
    message = " ".join(str(e).split())
    print(f"{type(e).__name__}: {message}", file=sys.stderr, flush=True)


# Import after all names above are defined (commands imports from this module)
# so the @register_command decorators populate COMMAND_REGISTRY on import.
import WindESN.commands  # noqa: E402,F401


if __name__ == "__main__":
    sys.exit(main())
