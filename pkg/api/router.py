"""
Command groups for the CLI. A `CommandRouter` collects handlers declared
with `@router.command(...)` and mounts them as argparse subcommands.
"""

import argparse
from typing import Callable, Sequence

from config import RADIUS_PRESETS, settings
from models.schemas import LabelConfig, NetworkConfig
import validators

Handler = Callable[[argparse.Namespace], int]
Option = tuple[tuple[str, ...], dict]


def option(*flags: str, **kwargs) -> Option:
    return flags, kwargs


class CommandRouter:
    def __init__(self, tag: str):
        self.tag = tag
        self._commands: list[tuple[str, str, Sequence[Option], Handler]] = []

    def command(self, name: str, help: str, options: Sequence[Option] = ()):
        def decorator(handler: Handler) -> Handler:
            self._commands.append((name, help, options, handler))
            return handler
        return decorator

    def include(self, subparsers, parents: Sequence[argparse.ArgumentParser] = ()) -> None:
        for name, help_text, options, handler in self._commands:
            parser = subparsers.add_parser(
                name,
                help=help_text,
                description=handler.__doc__,
                parents=list(parents),
                formatter_class=argparse.ArgumentDefaultsHelpFormatter,
            )
            for flags, kwargs in options:
                parser.add_argument(*flags, **kwargs)
            parser.set_defaults(handler=handler, command=name)


def common_parser() -> argparse.ArgumentParser:
    """Flags shared by every subcommand."""
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--seed", type=int, default=settings.SEED, help="seed for all randomness")
    parser.add_argument("--workers", type=validators.positive_int, default=settings.WORKERS,
                        help="threads for patch gathering and baseline fits")
    parser.add_argument("--config", default=None, help="key = value file; CLI flags override it")
    parser.add_argument("--log-level", dest="log_level", default=settings.LOG_LEVEL,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return parser


# Reusable option sets --------------------------------------------------------------

RADIUS = option("--radius", type=validators.radius, default=settings.RADII[-1],
                help="patch radius as a fraction of the bounding-box diagonal")
RADII = option("--radii", type=validators.radius_list, default=settings.RADII,
               help="comma-separated increasing radii, e.g. 0.01,0.03,0.05")
PRESET = option("--preset", choices=sorted(RADIUS_PRESETS), default=None,
                help="named radius set (multi1 = 0.01,0.03,0.05; multi2 = 0.03,0.05,0.07); overrides --radii")
K = option("--k", type=validators.positive_int, default=settings.K, help="points per patch")
THETA = option("--theta", type=validators.unit_interval, default=settings.THETA,
               help="plane-point threshold on the normalised normal error")
THETA_SMALL = option("--theta-small", dest="theta_small", type=validators.unit_interval,
                     default=settings.THETA_SMALL, help="threshold used at radii <= --small-scale-cutoff")
SMALL_CUTOFF = option("--small-scale-cutoff", dest="small_scale_cutoff", type=float,
                      default=settings.SMALL_SCALE_CUTOFF, help="largest radius treated as a small scale")
OUT = option("--out", required=True, help="output path")
INPUT = option("--input", nargs="+", default=None, help=".xyz file(s); sibling .normals/.pidx are picked up")
BENCHMARK = option("--benchmark", default=None, help="directory written by `gen --benchmark` (one subdirectory per category)")
DATASET_ROOT = option("--dataset-root", dest="dataset_root", default=settings.DATASET_ROOT,
                      help="PCPNet-layout dataset directory")
SPLIT = option("--split", nargs="+", default=None,
               help="split file stem(s) under --dataset-root; 'benchmark' loads all six test categories")
CHECKPOINT_IN = option("--checkpoint", default=None, help="trained model checkpoint (.npz)")

LABEL_OPTIONS = [THETA, THETA_SMALL, SMALL_CUTOFF]
SHAPE_SOURCE_OPTIONS = [INPUT, BENCHMARK, DATASET_ROOT, SPLIT]


def label_config(args: argparse.Namespace) -> LabelConfig:
    return LabelConfig(theta=args.theta, theta_small=args.theta_small, small_scale_cutoff=args.small_scale_cutoff)


def network_config(args: argparse.Namespace) -> NetworkConfig:
    """Architecture from --profile/--pooling plus any architecture keys in the --config file."""
    overrides = {key: value for key, value in getattr(args, "config_values", {}).items()
                 if key in NetworkConfig.model_fields}
    overrides["k"] = args.k
    if getattr(args, "pooling", None):
        overrides["pooling"] = args.pooling
    return NetworkConfig.profile(args.profile, **overrides)


def selected_radii(args: argparse.Namespace) -> list[float]:
    radii = RADIUS_PRESETS[args.preset] if getattr(args, "preset", None) else args.radii
    return validators.require_radii(radii)
