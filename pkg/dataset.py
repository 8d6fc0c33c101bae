"""
Access to point-cloud collections on disk.

Two layouts are understood:
  - a PCPNet-style root: `<root>/<shape>.xyz|.normals|.pidx` plus split
    files `<root>/<split>.txt` listing shape names;
  - a benchmark directory written by `gen --benchmark`: one subdirectory per
    category holding `.xyz` (+ `.normals`, `.pidx`) files.
"""

import logging
from pathlib import Path
from typing import Optional, Sequence

from config import settings
from exceptions import DataError, UsageError
from models.schemas import PointCloud
from services.pointcloud_service import load_cloud, load_split

logger = logging.getLogger(__name__)

# Category name -> PCPNet split file stem
PCPNET_CATEGORY_SPLITS = {
    "no_noise": "testset_no_noise",
    "small_noise": "testset_low_noise",
    "middle_noise": "testset_med_noise",
    "large_noise": "testset_high_noise",
    "gradient": "testset_vardensity_gradient",
    "stripes": "testset_vardensity_striped",
}

ShapeList = list[tuple[Optional[str], PointCloud]]


class DatasetStore:
    def __init__(self, root: str):
        self.root = Path(root)
        if not self.root.is_dir():
            raise UsageError(f"dataset root not found: {root}")

    def split_path(self, split: str) -> Path:
        return self.root / f"{split}.txt"

    def split(self, split: str) -> list[str]:
        return load_split(self.split_path(split))

    def shape_path(self, name: str) -> Path:
        return self.root / f"{name}.xyz"

    def load_shape(self, name: str) -> PointCloud:
        path = self.shape_path(name)
        if not path.is_file():
            raise DataError(f"shape {name} listed but {path} is missing")
        return load_cloud(path)

    def load_split_shapes(self, split: str, category: Optional[str] = None) -> ShapeList:
        names = self.split(split)
        logger.info("loading %d shapes of split %s", len(names), split)
        return [(category or split, self.load_shape(name)) for name in names]

    def load_benchmark(self) -> ShapeList:
        """All six PCPNet test categories, named like the synthetic benchmark."""
        shapes: ShapeList = []
        for category, split in PCPNET_CATEGORY_SPLITS.items():
            if not self.split_path(split).is_file():
                logger.warning("split %s not found under %s; category %s skipped", split, self.root, category)
                continue
            shapes.extend(self.load_split_shapes(split, category))
        if not shapes:
            raise DataError(f"no benchmark splits found under {self.root}")
        return shapes


# Global store instance
_store: Optional[DatasetStore] = None


def open_dataset(root: Optional[str] = None) -> DatasetStore:
    """Open (or reuse) the dataset store rooted at `root` or NORMALS_DATASET_ROOT."""
    global _store
    root = root or settings.DATASET_ROOT
    if root is None:
        raise UsageError("no dataset root: pass --dataset-root or set NORMALS_DATASET_ROOT")
    if _store is None or _store.root != Path(root):
        _store = DatasetStore(root)
    return _store


def close_dataset() -> None:
    global _store
    _store = None


def load_benchmark_dir(directory: str) -> ShapeList:
    root = Path(directory)
    if not root.is_dir():
        raise UsageError(f"benchmark directory not found: {directory}")
    shapes: ShapeList = []
    for category_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for xyz in sorted(category_dir.glob("*.xyz")):
            shapes.append((category_dir.name, load_cloud(xyz)))
    if not shapes:
        raise DataError(f"no .xyz files under {directory}")
    return shapes


def resolve_shapes(
    inputs: Optional[Sequence[str]] = None,
    benchmark_dir: Optional[str] = None,
    dataset_root: Optional[str] = None,
    splits: Optional[Sequence[str]] = None,
) -> ShapeList:
    """Shapes from explicit files, a benchmark directory, or dataset splits (in that order of preference)."""
    if inputs:
        return [(None, load_cloud(path)) for path in inputs]
    if benchmark_dir:
        return load_benchmark_dir(benchmark_dir)
    if dataset_root or settings.DATASET_ROOT:
        store = open_dataset(dataset_root)
        if not splits:
            raise UsageError("--split is required with a dataset root (use 'benchmark' for all test categories)")
        shapes: ShapeList = []
        for split in splits:
            shapes.extend(store.load_benchmark() if split == "benchmark" else store.load_split_shapes(split))
        return shapes
    raise UsageError("no input shapes: pass --input, --benchmark or --dataset-root with --split")
