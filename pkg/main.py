"""
Command-line entry point: `python main.py <command> [flags]`.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Failures print one
line to stderr: error code=<n> type=<Class> detail="<text>".
"""

import argparse
import logging
import sys
from typing import Optional, Sequence

from pydantic import ValidationError

from api.data import router as data_router
from api.evaluation import router as evaluation_router
from api.labels import router as labels_router
from api.router import common_parser
from api.training import router as training_router
from config import configure_logging, load_config_file
from dataset import close_dataset
from exceptions import NormalsError, UsageError

logger = logging.getLogger(__name__)

ROUTERS = [data_router, labels_router, training_router, evaluation_router]
TRUE_VALUES = {"1", "true", "yes", "on"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="normals",
        description="Patch-based point cloud normal estimation with a plane-point auxiliary task.",
    )
    subparsers = parser.add_subparsers(dest="command", metavar="<command>", required=True)
    parents = [common_parser()]
    for router in ROUTERS:
        router.include(subparsers, parents)
    return parser


def _subparsers(parser: argparse.ArgumentParser) -> dict[str, argparse.ArgumentParser]:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return dict(action.choices)
    return {}


def apply_config_defaults(parser: argparse.ArgumentParser, values: dict[str, str]) -> None:
    """Config-file values become subcommand defaults, so explicit flags still win."""
    for sub in _subparsers(parser).values():
        defaults = {}
        for action in sub._actions:
            if action.dest not in values:
                continue
            value = values[action.dest]
            if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                value = value.lower() in TRUE_VALUES
            defaults[action.dest] = value
        sub.set_defaults(**defaults)


def _fail(error: NormalsError) -> int:
    print(error.one_line(), file=sys.stderr)
    return error.exit_code


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()

    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    try:
        config_values = load_config_file(known.config) if known.config else {}
        apply_config_defaults(parser, config_values)
        args = parser.parse_args(argv)
    except NormalsError as e:
        return _fail(e)
    except SystemExit as e:
        # argparse: 0 after --help, 2 on usage errors
        return int(e.code or 0)

    args.config_values = config_values
    configure_logging(str(args.log_level))
    logger.debug("command %s with %s", args.command, vars(args))
    try:
        return args.handler(args)
    except NormalsError as e:
        return _fail(e)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"])
        return _fail(UsageError(f"invalid value for {field}: {first['msg']}"))
    except KeyboardInterrupt:
        return _fail(NormalsError("interrupted"))
    finally:
        close_dataset()


if __name__ == "__main__":
    sys.exit(run())
