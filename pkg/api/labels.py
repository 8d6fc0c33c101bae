import logging
from typing import Optional

import numpy as np
from pydantic import ValidationError

from api.router import CHECKPOINT_IN, CommandRouter, K, LABEL_OPTIONS, OUT, RADIUS, label_config, option
from exceptions import DataError, NormalsError, UsageError
from models import networks
from models.networks import MultiScaleModel
from models.schemas import PointCloud
from services import autodiff as ad
from services import patch_service, pointcloud_service
import validators

logger = logging.getLogger(__name__)

router = CommandRouter("labels")

INPUT_ONE = option("--input", required=True, help=".xyz file with a sibling .normals file")
CENTER = option("--center", type=int, default=None,
                help="center point index (default: the point nearest the origin)")


def _center_index(cloud: PointCloud, center: Optional[int]) -> int:
    if center is None:
        return int(np.argmin(np.linalg.norm(cloud.points, axis=1)))
    if not 0 <= center < cloud.n_points:
        raise UsageError(f"--center {center} outside [0, {cloud.n_points})")
    return center


def _unique_rows(patch, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop padding duplicates: first occurrence of every source point."""
    sources, first = np.unique(patch.source_indices, return_index=True)
    return sources, np.asarray(values)[first]


def _patch_cloud(cloud: PointCloud, sources: np.ndarray) -> PointCloud:
    return PointCloud(name=f"{cloud.name}_patch", points=cloud.points[sources])


@router.command(
    "labels",
    help="compute plane/error labels for one patch and write them as a colored PLY",
    options=[INPUT_ONE, CENTER, RADIUS, K, *LABEL_OPTIONS, OUT],
)
def export_patch_labels(args) -> int:
    """
    Extracts the patch around --center, labels every neighbour as a plane
    point (red) or error point (grey) from the ground-truth normals, and
    writes the patch points to an ASCII PLY.
    """
    try:
        validators.require_file(args.input)
        validators.require_output(args.out)
        cloud = pointcloud_service.load_cloud(args.input)
        if cloud.normals is None:
            raise DataError(f"{args.input}: labels need a sibling .normals file")
        t = _center_index(cloud, args.center)

        patch = patch_service.extract_patch(cloud, t, args.radius, k=args.k, seed=args.seed)
        patch_service.label_patch(patch, label_config(args))
        sources, labels = _unique_rows(patch, patch.plane_labels)
        pointcloud_service.write_ply(_patch_cloud(cloud, sources), labels, args.out, colormap="labels")

        print(f"center={t} points={len(sources)} plane={int(labels.sum())} error={int((~labels).sum())}")
        return 0
    except (NormalsError, ValidationError):
        raise
    except Exception as e:
        raise NormalsError(f"Failed to label patch: {str(e)}")


@router.command(
    "export-labels",
    help="write the plane labels predicted by a trained model for one patch as a colored PLY",
    options=[INPUT_ONE, CENTER, CHECKPOINT_IN,
             option("--radius", type=validators.radius, default=None,
                    help="single-scale patch radius (default: the radius stored in the checkpoint)"),
             OUT],
)
def export_predicted_labels(args) -> int:
    """
    Runs the model on the patch around --center and colors each patch point
    by its predicted class (probability > 0.5 is a plane point). For a
    multi-scale model the patch of the selected scale is exported.
    """
    try:
        validators.require_file(args.input)
        validators.require_file(args.checkpoint, "checkpoint")
        validators.require_output(args.out)
        cloud = pointcloud_service.load_cloud(args.input)
        t = _center_index(cloud, args.center)
        model, metadata = networks.load_model(args.checkpoint)
        index = patch_service.build_index(cloud.points)

        with ad.no_grad():
            if isinstance(model, MultiScaleModel):
                patches = [patch_service.extract_patch(cloud, t, r, k=model.config.k, seed=args.seed, index=index)
                           for r in model.radii]
                out = model.forward([p.coords for p in patches])
                scale = int(out.selected_scale[0])
                patch, probs = patches[scale], out.scales[scale].plane_probs.data[0]
                logger.info("selected scale %d (radius %g)", scale, model.radii[scale])
            else:
                radius = args.radius or metadata.get("radius")
                if radius is None:
                    raise UsageError("--radius is required: the checkpoint does not record one")
                patch = patch_service.extract_patch(cloud, t, radius, k=model.config.k, seed=args.seed, index=index)
                probs = model.forward(patch.coords).plane_probs.data[0]

        sources, predicted = _unique_rows(patch, probs > 0.5)
        pointcloud_service.write_ply(_patch_cloud(cloud, sources), predicted, args.out, colormap="labels")
        print(f"center={t} points={len(sources)} plane={int(predicted.sum())} error={int((~predicted).sum())}")
        return 0
    except (NormalsError, ValidationError):
        raise
    except Exception as e:
        raise NormalsError(f"Failed to export predicted labels: {str(e)}")
