"""
Radius patches around cloud points and their plane-point labels.

Radii are fractions of the cloud's bounding-box diagonal and are converted
to absolute distances once per query.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from exceptions import DataError, PatchError
from models.schemas import LabelConfig, Patch, PointCloud

logger = logging.getLogger(__name__)

DEFAULT_K = 500


class SpatialIndex:
    """Immutable k-d tree over a point set answering closed-ball radius queries."""

    def __init__(self, points: np.ndarray):
        points = np.array(points, dtype=np.float64)
        if points.ndim != 2 or len(points) == 0:
            raise DataError("cannot index an empty cloud")
        points.setflags(write=False)
        self.points = points
        self._tree = cKDTree(points)

    def __len__(self) -> int:
        return len(self.points)

    def query_radius(self, center: np.ndarray, radius: float) -> np.ndarray:
        """Sorted indices of points with ||p - center|| <= radius."""
        found = self._tree.query_ball_point(np.asarray(center, dtype=np.float64), r=radius, return_sorted=True)
        return np.asarray(found, dtype=np.int64)


def build_index(points: np.ndarray) -> SpatialIndex:
    return SpatialIndex(points)


def extract_patch(
    cloud: PointCloud,
    t: int,
    r: float,
    k: int = DEFAULT_K,
    seed: int = 0,
    index: Optional[SpatialIndex] = None,
) -> Patch:
    """
    Gather the neighbours of point `t` within r * bbox_diagonal, resample to
    exactly `k` rows (subsample without replacement, or pad by replicating
    real neighbours) and normalise to the unit ball around the center.
    The center point is always row 0.
    """
    if r <= 0:
        raise PatchError(f"patch radius must be positive, got {r}")
    if not 0 <= t < cloud.n_points:
        raise PatchError(f"center index {t} outside [0, {cloud.n_points})")
    index = index or build_index(cloud.points)
    radius_abs = r * cloud.bbox_diagonal
    if radius_abs <= 0:
        raise PatchError(f"{cloud.name}: degenerate bounding box, cannot scale radius {r}")

    center = cloud.points[t]
    neighbors = index.query_radius(center, radius_abs)
    if len(neighbors) == 0:
        raise PatchError(f"{cloud.name}: point {t} has an empty neighbourhood at radius {r}")
    others = neighbors[neighbors != t]

    rng = np.random.default_rng(seed)
    if len(others) + 1 >= k:
        chosen = rng.choice(others, size=k - 1, replace=False) if k > 1 else others[:0]
        rows = np.concatenate([[t], chosen])
    else:
        real = np.concatenate([[t], others])
        padding = rng.choice(real, size=k - len(real), replace=True)
        rows = np.concatenate([real, padding])

    coords = (cloud.points[rows] - center) / radius_abs
    coords[0] = 0.0
    patch = Patch(center_index=t, radius=r, coords=coords, source_indices=rows)
    if cloud.normals is not None:
        patch.gt_center_normal = cloud.normals[t].copy()
        patch.gt_point_normals = cloud.normals[rows].copy()
    return patch


def error_distance(point_normals: np.ndarray, center_normal: np.ndarray) -> np.ndarray:
    """P(n_j) = min(||n_j - n||, ||n_j + n||) per row."""
    point_normals = np.asarray(point_normals, dtype=np.float64)
    center_normal = np.asarray(center_normal, dtype=np.float64)
    minus = np.linalg.norm(point_normals - center_normal, axis=-1)
    plus = np.linalg.norm(point_normals + center_normal, axis=-1)
    return np.minimum(minus, plus)


def normalize_errors(errors: np.ndarray, epsilon: float = 0.01) -> np.ndarray:
    errors = np.asarray(errors, dtype=np.float64)
    low = errors.min()
    return (errors - low) / (errors.max() - low + epsilon)


def plane_labels(normalized: np.ndarray, config: LabelConfig, r: float) -> np.ndarray:
    return np.asarray(normalized) <= config.effective_theta(r)


def label_patch(patch: Patch, config: LabelConfig) -> Patch:
    if patch.gt_point_normals is None or patch.gt_center_normal is None:
        raise PatchError(f"patch at point {patch.center_index} has no ground-truth normals to label")
    errors = normalize_errors(error_distance(patch.gt_point_normals, patch.gt_center_normal), config.epsilon)
    patch.plane_labels = plane_labels(errors, config, patch.radius)
    return patch


def extract_patches(
    cloud: PointCloud,
    centers: Sequence[int],
    r: float,
    k: int = DEFAULT_K,
    seeds: Optional[Sequence[int]] = None,
    label_config: Optional[LabelConfig] = None,
    index: Optional[SpatialIndex] = None,
    workers: int = 1,
) -> list[Patch]:
    """Extract (and optionally label) many patches from one cloud; order follows `centers`."""
    index = index or build_index(cloud.points)
    seeds = list(seeds) if seeds is not None else [int(c) for c in centers]

    def one(item):
        t, seed = item
        patch = extract_patch(cloud, int(t), r, k=k, seed=seed, index=index)
        return label_patch(patch, label_config) if label_config is not None else patch

    items = list(zip(centers, seeds))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, items))
    return [one(item) for item in items]
