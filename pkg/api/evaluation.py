import logging
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from api.router import CHECKPOINT_IN, CommandRouter, RADIUS, SHAPE_SOURCE_OPTIONS, option
from dataset import resolve_shapes
from exceptions import DataError, NormalsError, UsageError
from models import networks
from models.networks import MultiScaleModel
from models.schemas import PointCloud
from services import evaluation_service, pointcloud_service
from services.evaluation_service import (
    GroundTruthEstimator, JetEstimator, MultiScaleEstimator, NormalEstimator, PcaEstimator, SingleScaleEstimator,
)
from services.export_service import export_service
import validators

logger = logging.getLogger(__name__)

router = CommandRouter("evaluation")

ESTIMATORS = ["gt", "pca", "jet", "single", "multi"]
SWEEP_RADII = "0.01,0.03,0.05,0.07"

ESTIMATOR = option("--estimator", choices=ESTIMATORS, default="pca",
                   help="gt feeds the ground truth back; single/multi need --checkpoint")
INFERENCE_BATCH = option("--batch", type=validators.positive_int, default=256, help="patches per forward pass")
REPORT_OPTIONS = [
    option("--out", default=None, help="also write the text report here"),
    option("--csv", default=None, help="CSV report path"),
    option("--pdf", default=None, help="PDF report path"),
]


def make_estimator(args, radius: float) -> NormalEstimator:
    if args.estimator == "gt":
        return GroundTruthEstimator()
    if args.estimator == "pca":
        return PcaEstimator(radius, workers=args.workers)
    if args.estimator == "jet":
        return JetEstimator(radius, workers=args.workers)

    validators.require_file(args.checkpoint, "checkpoint")
    model, metadata = networks.load_model(args.checkpoint)
    if args.estimator == "multi":
        if not isinstance(model, MultiScaleModel):
            raise UsageError(f"{args.checkpoint} holds a single-scale model; use --estimator single")
        return MultiScaleEstimator(model, k=model.config.k, seed=args.seed, batch_size=args.batch, workers=args.workers)
    if isinstance(model, MultiScaleModel):
        raise UsageError(f"{args.checkpoint} holds a multi-scale model; use --estimator multi")
    trained_radius = metadata.get("radius", radius)
    if trained_radius != radius:
        logger.info("using the checkpoint's training radius %g", trained_radius)
    return SingleScaleEstimator(
        model, trained_radius, k=model.config.k, seed=args.seed, batch_size=args.batch, workers=args.workers
    )


def _validate_outputs(args) -> None:
    for path, what in ((args.out, "report"), (args.csv, "CSV report"), (args.pdf, "PDF report")):
        if path:
            validators.require_output(path, what)


def _emit(args, reports) -> None:
    text = export_service.render_text_report(reports)
    print(text, end="")
    if args.out:
        Path(args.out).write_text(text)
        logger.info("wrote text report to %s", args.out)
    if args.csv:
        export_service.write_csv(reports, args.csv)
    if args.pdf:
        export_service.write_pdf(reports, args.pdf)


@router.command(
    "eval",
    help="RMSE angle error of one estimator over a set of shapes",
    options=[ESTIMATOR, RADIUS, CHECKPOINT_IN, INFERENCE_BATCH, *SHAPE_SOURCE_OPTIONS, *REPORT_OPTIONS],
)
def evaluate(args) -> int:
    """
    Estimates normals at every evaluation point (.pidx subset when present),
    reports per-shape and per-category RMSE in degrees plus the number of
    degenerate points excluded; multi-scale runs add the scale selection
    histogram.
    """
    try:
        validators.require_files(args.input)
        _validate_outputs(args)
        estimator = make_estimator(args, args.radius)
        shapes = resolve_shapes(args.input, args.benchmark, args.dataset_root, args.split)
        report = evaluation_service.evaluate_many(shapes, estimator)
        _emit(args, [report])
        return 0
    except (NormalsError, ValidationError):
        raise
    except Exception as e:
        raise NormalsError(f"Failed to evaluate: {str(e)}")


@router.command(
    "baseline-sweep",
    help="PCA/jet RMSE over a range of radii, one table row per radius",
    options=[
        option("--estimators", default="pca,jet", help="comma-separated baselines (pca, jet)"),
        option("--radii", type=validators.radius_list, default=SWEEP_RADII, help="radii to sweep"),
        *SHAPE_SOURCE_OPTIONS,
        *REPORT_OPTIONS,
    ],
)
def baseline_sweep(args) -> int:
    """Prints every radius's report and the radius with the lowest overall average per baseline."""
    try:
        validators.require_files(args.input)
        _validate_outputs(args)
        names = [n for n in args.estimators.replace(" ", "").split(",") if n]
        unknown = sorted(set(names) - {"pca", "jet"})
        if unknown:
            raise UsageError(f"unknown baseline(s): {', '.join(unknown)}")
        shapes = resolve_shapes(args.input, args.benchmark, args.dataset_root, args.split)

        reports, best = [], {}
        for name in names:
            factory = PcaEstimator if name == "pca" else JetEstimator
            sweep = evaluation_service.radius_sweep(shapes, lambda r: factory(r, workers=args.workers), args.radii)
            reports.extend(sweep.values())
            best[name] = evaluation_service.best_radius(sweep)
        _emit(args, reports)
        for name, radius in best.items():
            print(f"best {name} radius={radius:g}")
        return 0
    except (NormalsError, ValidationError):
        raise
    except Exception as e:
        raise NormalsError(f"Failed to run baseline sweep: {str(e)}")


@router.command(
    "export-heatmap",
    help="write a PLY colored by per-point angle error (blue 0 deg to yellow 60 deg)",
    options=[
        option("--input", required=True, help=".xyz file with a sibling .normals file"),
        ESTIMATOR, RADIUS, CHECKPOINT_IN, INFERENCE_BATCH,
        option("--out", required=True, help="output .ply"),
    ],
)
def export_heatmap(args) -> int:
    """Every point is estimated; degenerate points are drawn with the top color."""
    try:
        validators.require_file(args.input)
        validators.require_output(args.out)
        cloud = pointcloud_service.load_cloud(args.input)
        if cloud.normals is None:
            raise DataError(f"{args.input}: the heatmap needs a sibling .normals file")
        estimator = make_estimator(args, args.radius)

        everything = PointCloud(name=cloud.name, points=cloud.points, normals=cloud.normals)
        indices = everything.evaluation_indices()
        result = estimator.estimate(everything, indices)
        angles = np.full(len(indices), 90.0)
        angles[result.valid] = evaluation_service.unoriented_angles(
            cloud.normals[indices][result.valid], result.normals[result.valid]
        )
        pointcloud_service.write_ply(everything, angles, args.out, colormap="heatmap")
        rmse = evaluation_service.rmse_shape(angles[result.valid]) if result.valid.any() else float("nan")
        print(f"points={len(indices)} excluded={int((~result.valid).sum())} rmse={rmse:.4f}")
        return 0
    except (NormalsError, ValidationError):
        raise
    except Exception as e:
        raise NormalsError(f"Failed to export heatmap: {str(e)}")
