"""Precondition guards run by commands before any work starts. All raise UsageError (exit 2)."""

import argparse
from pathlib import Path
from typing import Optional, Sequence

from exceptions import UsageError
from services.pointcloud_service import MIN_POINTS


def require_file(path: Optional[str], what: str = "input file") -> Path:
    if not path or not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")
    return Path(path)


def require_files(paths: Optional[Sequence[str]], what: str = "input file") -> list[Path]:
    return [require_file(p, what) for p in (paths or [])]


def require_output(path: Optional[str], what: str = "output") -> Path:
    """Parent directory of an output path must exist."""
    if not path:
        raise UsageError(f"missing {what} path")
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise UsageError(f"directory for {what} does not exist: {parent}")
    return Path(path)


def require_radii(radii: Sequence[float]) -> list[float]:
    radii = [float(r) for r in radii]
    if not radii:
        raise UsageError("at least one radius is required")
    if any(r <= 0 or r > 1 for r in radii):
        raise UsageError(f"radii must lie in (0, 1], got {radii}")
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise UsageError(f"radii must be strictly increasing, got {radii}")
    return radii


def require_checkpoints(paths: Optional[Sequence[str]], count: int) -> list[Path]:
    files = require_files(paths, "checkpoint")
    if files and len(files) != count:
        raise UsageError(f"{len(files)} checkpoints given for {count} radii")
    return files


# argparse `type=` converters: failures become exit-2 usage errors

def positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return value


def radius(text: str) -> float:
    value = positive_float(text)
    if value > 1:
        raise argparse.ArgumentTypeError(f"radius is a fraction of the bounding-box diagonal, got {value}")
    return value


def radius_list(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(r) for r in text]
    values = [radius(item) for item in str(text).replace(" ", "").split(",") if item]
    try:
        return require_radii(values)
    except UsageError as e:
        raise argparse.ArgumentTypeError(e.detail) from None


def unit_interval(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1], got {value}")
    return value


def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def non_negative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {value}")
    return value


def point_count(text: str) -> int:
    value = positive_int(text)
    if value < MIN_POINTS:
        raise argparse.ArgumentTypeError(f"must be at least {MIN_POINTS} points, got {value}")
    return value
