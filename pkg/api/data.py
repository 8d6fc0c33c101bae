import logging
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from api.router import CommandRouter, OUT, option
from exceptions import NormalsError, UsageError
from models.schemas import DensityPattern, NoiseSpec, PointCloud
from services import pointcloud_service
import validators

logger = logging.getLogger(__name__)

router = CommandRouter("data")

SHAPE_KINDS = ["plane", "sphere", "cylinder", "cube", "dihedral"]


def _with_eval_points(cloud: PointCloud, count: int, seed: int) -> PointCloud:
    if count <= 0:
        return cloud
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(cloud.n_points, size=min(count, cloud.n_points), replace=False))
    return PointCloud(name=cloud.name, points=cloud.points, normals=cloud.normals, eval_indices=chosen)


def _shape_params(kind: str, args) -> dict:
    return {"angle": args.angle} if kind == "dihedral" else {}


@router.command(
    "gen",
    help="generate synthetic clouds with analytic normals",
    options=[
        option("--shape", choices=SHAPE_KINDS, default="sphere", help="surface to sample"),
        option("--shapes", default=",".join(SHAPE_KINDS),
               help="with --benchmark: comma-separated base shapes"),
        option("--n", type=validators.point_count, default=10000, help="number of points (>= 100)"),
        option("--noise", type=float, default=0.0, help="Gaussian noise std as a fraction of the bbox diagonal"),
        option("--density", choices=["none", "stripes", "gradient"], default="none",
               help="non-uniform resampling pattern"),
        option("--p-low", dest="p_low", type=float, default=0.1, help="lowest retention probability"),
        option("--p-high", dest="p_high", type=float, default=1.0, help="highest retention probability"),
        option("--angle", type=float, default=90.0, help="dihedral interior angle in degrees"),
        option("--eval-points", dest="eval_points", type=validators.non_negative_int, default=0,
               help="write a .pidx with this many evaluation indices (0: none)"),
        option("--benchmark", action="store_true",
               help="write the six test categories (4 noise levels, 2 density patterns) under --out"),
        OUT,
    ],
)
def generate(args) -> int:
    """
    Writes <out> (.xyz) with a sibling .normals file, plus .pidx when
    --eval-points is positive. With --benchmark, <out> is a directory that
    receives one subdirectory per test category.
    """
    try:
        if args.benchmark:
            return _generate_benchmark(args)
        validators.require_output(args.out)
        cloud = pointcloud_service.gen_shape(args.shape, _shape_params(args.shape, args), n_points=args.n, seed=args.seed)
        cloud = _with_eval_points(cloud, args.eval_points, args.seed)
        if args.noise:
            cloud = pointcloud_service.add_noise(cloud, NoiseSpec(sigma=args.noise, seed=args.seed))
        if args.density != "none":
            pattern = DensityPattern(kind=args.density, p_low=args.p_low, p_high=args.p_high, seed=args.seed)
            cloud = pointcloud_service.apply_density(cloud, pattern)
        for path in pointcloud_service.save_cloud(cloud, Path(args.out).with_suffix(".xyz")):
            print(path)
        return 0
    except (NormalsError, ValidationError):
        raise
    except Exception as e:
        raise NormalsError(f"Failed to generate shape: {str(e)}")


def _generate_benchmark(args) -> int:
    root = Path(args.out)
    if root.exists() and not root.is_dir():
        raise UsageError(f"--out must be a directory with --benchmark: {root}")
    kinds = [s for s in args.shapes.replace(" ", "").split(",") if s]
    unknown = sorted(set(kinds) - set(SHAPE_KINDS))
    if unknown:
        raise UsageError(f"unknown shape(s): {', '.join(unknown)}")

    base = []
    for i, kind in enumerate(kinds):
        cloud = pointcloud_service.gen_shape(kind, _shape_params(kind, args), n_points=args.n, seed=args.seed + i)
        base.append(_with_eval_points(cloud, args.eval_points, args.seed + i))

    categories = pointcloud_service.generate_benchmark(base, seed=args.seed)
    for category, clouds in categories.items():
        (root / category).mkdir(parents=True, exist_ok=True)
        for cloud in clouds:
            pointcloud_service.save_cloud(cloud, root / category / f"{cloud.name}.xyz")
        logger.info("%s: wrote %d shapes", category, len(clouds))
    print(root)
    return 0
