"""
Unoriented angle metric, per-shape RMSE and category aggregation.

Estimators share one interface: `estimate(cloud, indices)` returns one
normal per requested point plus a validity mask. Invalid (degenerate)
points are excluded from the RMSE and counted.
"""

import abc
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from exceptions import DataError, DegenerateError
from models.networks import MultiScaleModel, SingleScaleModel, plane_accuracy
from models.schemas import EvalReport, PointCloud, ShapeEvaluation
from services import autodiff as ad
from services.baseline_service import jet_normal, pca_normal
from services.patch_service import SpatialIndex, build_index, extract_patches

logger = logging.getLogger(__name__)


# Metrics ------------------------------------------------------------------------

def unoriented_angles(n: np.ndarray, n_hat: np.ndarray) -> np.ndarray:
    """Row-wise arccos(|n . n_hat|) in degrees, inputs normalised internally."""
    n = np.atleast_2d(np.asarray(n, dtype=np.float64))
    n_hat = np.atleast_2d(np.asarray(n_hat, dtype=np.float64))
    len_n = np.linalg.norm(n, axis=-1)
    len_hat = np.linalg.norm(n_hat, axis=-1)
    if np.any(len_n == 0) or np.any(len_hat == 0):
        raise DegenerateError("unoriented angle of a zero vector")
    cos = np.abs(np.sum(n * n_hat, axis=-1)) / (len_n * len_hat)
    return np.degrees(np.arccos(np.clip(cos, 0.0, 1.0)))


def unoriented_angle(n, n_hat) -> float:
    return float(unoriented_angles(n, n_hat)[0])


def rmse_shape(angles) -> float:
    angles = np.asarray(angles, dtype=np.float64).reshape(-1)
    if len(angles) == 0:
        raise DataError("RMSE of an empty angle list")
    return float(np.sqrt(np.mean(angles * angles)))


# Estimators ---------------------------------------------------------------------

@dataclass
class Estimate:
    normals: np.ndarray  # (M, 3)
    valid: np.ndarray  # (M,) bool
    selected_scale: Optional[np.ndarray] = None  # (M,) multi-scale only


class NormalEstimator(abc.ABC):
    name: str = "estimator"

    @abc.abstractmethod
    def estimate(self, cloud: PointCloud, indices: np.ndarray) -> Estimate:
        ...


class GroundTruthEstimator(NormalEstimator):
    name = "ground-truth"

    def estimate(self, cloud: PointCloud, indices: np.ndarray) -> Estimate:
        if cloud.normals is None:
            raise DataError(f"{cloud.name}: no ground-truth normals")
        return Estimate(normals=cloud.normals[indices].copy(), valid=np.ones(len(indices), dtype=bool))


class BaselineEstimator(NormalEstimator):
    """Fit on the raw radius neighbourhood of each point, centered on the query point."""

    def __init__(self, radius: float, workers: int = 1):
        if radius <= 0:
            raise DataError(f"radius must be positive, got {radius}")
        self.radius = radius
        self.workers = workers

    @abc.abstractmethod
    def fit(self, coords: np.ndarray):
        ...

    def estimate(self, cloud: PointCloud, indices: np.ndarray) -> Estimate:
        index = build_index(cloud.points)
        radius_abs = self.radius * cloud.bbox_diagonal

        def one(t):
            coords = (cloud.points[index.query_radius(cloud.points[t], radius_abs)] - cloud.points[t]) / radius_abs
            return self.fit(coords)

        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                results = list(pool.map(one, indices))
        else:
            results = [one(t) for t in indices]
        return Estimate(
            normals=np.array([r.normal for r in results]).reshape(-1, 3),
            valid=np.array([r.ok for r in results], dtype=bool),
        )


class PcaEstimator(BaselineEstimator):
    name = "pca"

    def fit(self, coords):
        return pca_normal(coords)


class JetEstimator(BaselineEstimator):
    name = "jet"

    def fit(self, coords):
        return jet_normal(coords)


class NetworkEstimator(NormalEstimator):
    """Batched forward passes over fixed-size patches; patch sampling is seeded per point."""

    def __init__(self, model: Union[SingleScaleModel, MultiScaleModel], k: int = 500, seed: int = 0,
                 batch_size: int = 256, workers: int = 1):
        self.model = model
        self.k = k
        self.seed = seed
        self.batch_size = batch_size
        self.workers = workers

    def _patch_coords(self, cloud: PointCloud, indices: np.ndarray, radius: float, index: SpatialIndex) -> np.ndarray:
        patches = extract_patches(
            cloud, indices, radius, k=self.k, seeds=[self.seed + int(t) for t in indices],
            index=index, workers=self.workers,
        )
        return np.stack([p.coords for p in patches])


class SingleScaleEstimator(NetworkEstimator):
    name = "single-scale"

    def __init__(self, model: SingleScaleModel, radius: float, k: int = 500, seed: int = 0,
                 batch_size: int = 256, workers: int = 1):
        super().__init__(model, k=k, seed=seed, batch_size=batch_size, workers=workers)
        self.radius = radius

    def estimate(self, cloud: PointCloud, indices: np.ndarray) -> Estimate:
        index = build_index(cloud.points)
        coords = self._patch_coords(cloud, indices, self.radius, index)
        normals = np.zeros((len(indices), 3))
        valid = np.ones(len(indices), dtype=bool)
        with ad.no_grad():
            for start in range(0, len(indices), self.batch_size):
                rows = slice(start, start + self.batch_size)
                try:
                    normals[rows] = self.model.forward(coords[rows]).normal.data
                except DegenerateError as e:
                    logger.debug("batch at %d excluded: %s", start, e.detail)
                    valid[rows] = False
        return Estimate(normals=normals, valid=valid)


class MultiScaleEstimator(NetworkEstimator):
    name = "multi-scale"

    def estimate(self, cloud: PointCloud, indices: np.ndarray) -> Estimate:
        index = build_index(cloud.points)
        coords = [self._patch_coords(cloud, indices, r, index) for r in self.model.radii]
        normals = np.zeros((len(indices), 3))
        selected = np.zeros(len(indices), dtype=np.int64)
        valid = np.ones(len(indices), dtype=bool)
        with ad.no_grad():
            for start in range(0, len(indices), self.batch_size):
                rows = slice(start, start + self.batch_size)
                try:
                    out = self.model.forward([c[rows] for c in coords])
                except DegenerateError as e:
                    logger.debug("batch at %d excluded: %s", start, e.detail)
                    valid[rows] = False
                    continue
                normals[rows] = out.normal
                selected[rows] = out.selected_scale
        return Estimate(normals=normals, valid=valid, selected_scale=selected)


# Aggregation --------------------------------------------------------------------

def evaluate(cloud: PointCloud, estimator: NormalEstimator, category: Optional[str] = None) -> ShapeEvaluation:
    if cloud.normals is None:
        raise DataError(f"{cloud.name}: evaluation needs ground-truth normals")
    indices = cloud.evaluation_indices()
    if len(indices) == 0:
        raise DataError(f"{cloud.name}: no evaluation points")
    result = estimator.estimate(cloud, indices)

    n_excluded = int((~result.valid).sum())
    if n_excluded:
        logger.warning("%s: %d of %d points excluded as degenerate (%s)", cloud.name, n_excluded, len(indices), estimator.name)
    if n_excluded == len(indices):
        raise DegenerateError(f"{cloud.name}: every evaluation point was degenerate for {estimator.name}")

    angles = unoriented_angles(cloud.normals[indices][result.valid], result.normals[result.valid])
    scale_counts = None
    if result.selected_scale is not None:
        n_scales = estimator.model.n_scales
        scale_counts = np.bincount(result.selected_scale[result.valid], minlength=n_scales).tolist()

    evaluation = ShapeEvaluation(
        name=cloud.name,
        category=category,
        rmse=rmse_shape(angles),
        angles=angles,
        n_evaluated=int(result.valid.sum()),
        n_excluded=n_excluded,
        scale_counts=scale_counts,
    )
    logger.info("%s [%s]: RMSE %.4f deg over %d points", cloud.name, estimator.name, evaluation.rmse, evaluation.n_evaluated)
    return evaluation


def build_report(estimator_name: str, evaluations: Sequence[ShapeEvaluation]) -> EvalReport:
    """
    Category values are plain means of their shapes' RMSE. The overall
    average is the mean over categories when shapes carry one, else over shapes.
    """
    if not evaluations:
        raise DataError("no evaluations to report")
    per_shape: dict[str, float] = {}
    by_category: dict[str, list[float]] = {}
    exclusions: dict[str, int] = {}
    histogram: Optional[np.ndarray] = None
    histogram_by_category: dict[str, np.ndarray] = {}

    for ev in evaluations:
        key = f"{ev.category}/{ev.name}" if ev.category else ev.name
        per_shape[key] = ev.rmse
        exclusions[key] = ev.n_excluded
        if ev.category:
            by_category.setdefault(ev.category, []).append(ev.rmse)
        if ev.scale_counts is not None:
            counts = np.asarray(ev.scale_counts, dtype=np.int64)
            histogram = counts.copy() if histogram is None else histogram + counts
            if ev.category:
                previous = histogram_by_category.get(ev.category)
                histogram_by_category[ev.category] = counts.copy() if previous is None else previous + counts

    per_category = {name: float(np.mean(values)) for name, values in by_category.items()}
    overall = float(np.mean(list(per_category.values()) if per_category else list(per_shape.values())))
    return EvalReport(
        estimator=estimator_name,
        per_shape=per_shape,
        per_category=per_category,
        overall_average=overall,
        exclusions=exclusions,
        scale_histogram=None if histogram is None else histogram.tolist(),
        scale_histogram_by_category={k: v.tolist() for k, v in histogram_by_category.items()} or None,
    )


def evaluate_many(
    shapes: Sequence[tuple[Optional[str], PointCloud]], estimator: NormalEstimator
) -> EvalReport:
    return build_report(estimator.name, [evaluate(cloud, estimator, category) for category, cloud in shapes])


def radius_sweep(
    shapes: Sequence[tuple[Optional[str], PointCloud]],
    make_estimator: Callable[[float], NormalEstimator],
    radii: Sequence[float],
) -> dict[float, EvalReport]:
    """One report per radius; the caller picks the best overall average."""
    reports = {}
    for radius in radii:
        estimator = make_estimator(radius)
        report = evaluate_many(shapes, estimator)
        report.estimator = f"{estimator.name}@{radius:g}"
        reports[radius] = report
        logger.info("radius %g: overall %.4f deg", radius, report.overall_average)
    return reports


def best_radius(reports: dict[float, EvalReport]) -> float:
    return min(reports, key=lambda r: reports[r].overall_average)


def selection_fractions(report: EvalReport) -> dict[str, list[float]]:
    """Share of points assigned to each scale, per category and over all points ("all")."""
    if report.scale_histogram is None:
        return {}
    histograms = {**(report.scale_histogram_by_category or {}), "all": report.scale_histogram}
    return {name: (np.asarray(counts) / max(1, sum(counts))).tolist() for name, counts in histograms.items()}


# Patch-level checks on prepared datasets -----------------------------------------

def patch_plane_accuracy(model: SingleScaleModel, coords: np.ndarray, labels: np.ndarray) -> float:
    with ad.no_grad():
        probs = model.forward(coords).plane_probs.data
    return plane_accuracy(probs, labels)


def patch_angles(model: SingleScaleModel, coords: np.ndarray, normals: np.ndarray) -> np.ndarray:
    with ad.no_grad():
        predicted = model.forward(coords).normal.data
    return unoriented_angles(normals, predicted)
