import logging

from pydantic import ValidationError

from api.router import (
    CommandRouter, K, LABEL_OPTIONS, PRESET, RADII, RADIUS, SHAPE_SOURCE_OPTIONS,
    label_config, network_config, option, selected_radii,
)
from config import settings
from dataset import resolve_shapes
from exceptions import NormalsError, UsageError
from models import networks
from models.networks import MultiScaleModel, SingleScaleModel
from models.schemas import NoiseSpec, PointCloud, TrainConfig
from services import pointcloud_service, training_service
from services.export_service import export_service
import validators

logger = logging.getLogger(__name__)

router = CommandRouter("training")

TRAINING_OPTIONS = [
    *SHAPE_SOURCE_OPTIONS,
    option("--synthetic", default=None,
           help="train on generated shapes instead, e.g. plane,sphere,dihedral"),
    option("--synthetic-noise", dest="synthetic_noise", default="0,0.012",
           help="noise levels (fractions of the bbox diagonal) applied to every --synthetic shape"),
    option("--n", type=validators.point_count, default=5000, help="points per --synthetic shape (>= 100)"),
    K,
    *LABEL_OPTIONS,
    option("--epochs", type=validators.non_negative_int, default=settings.EPOCHS),
    option("--lr", dest="learning_rate", type=validators.positive_float, default=settings.LEARNING_RATE,
           help="SGD learning rate"),
    option("--momentum", type=float, default=settings.MOMENTUM),
    option("--patches-per-shape", dest="patches_per_shape", type=validators.positive_int,
           default=settings.PATCHES_PER_SHAPE),
    option("--profile", choices=["full", "reduced"], default="full", help="architecture widths"),
    option("--pooling", choices=["weighted", "mean"], default="weighted", help="symmetric pooling of point features"),
    option("--no-plane-loss", dest="plane_loss", action="store_false",
           help="train on the normal loss only (plane heads are not updated)"),
    option("--checkpoint", required=True, help="output checkpoint (.npz)"),
    option("--checkpoint-every", dest="checkpoint_every", type=validators.positive_int, default=None,
           help="also write the checkpoint every N epochs"),
    option("--history", default=None, help="loss history CSV (epoch, L_normal, L_main, L_total)"),
]


def _synthetic_shapes(args) -> list[PointCloud]:
    kinds = [k for k in args.synthetic.replace(" ", "").split(",") if k]
    try:
        levels = [float(s) for s in args.synthetic_noise.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--synthetic-noise must be comma-separated numbers: {args.synthetic_noise}") from None
    shapes = []
    for i, kind in enumerate(kinds):
        clean = pointcloud_service.gen_shape(kind, n_points=args.n, seed=args.seed + i)
        for j, sigma in enumerate(levels):
            noisy = pointcloud_service.add_noise(clean, NoiseSpec(sigma=sigma, seed=args.seed + 1000 * (j + 1) + i))
            noisy.name = f"{clean.name}_noise{sigma:g}"
            shapes.append(noisy)
    return shapes


def _training_shapes(args) -> list[PointCloud]:
    if args.synthetic:
        return _synthetic_shapes(args)
    validators.require_files(args.input)
    return [cloud for _, cloud in resolve_shapes(args.input, args.benchmark, args.dataset_root, args.split)]


def _train_config(args, radii: list[float]) -> TrainConfig:
    return TrainConfig(
        radii=radii,
        batch_size_single=getattr(args, "batch_size_single", settings.BATCH_SIZE_SINGLE),
        batch_size_multi=getattr(args, "batch_size_multi", settings.BATCH_SIZE_MULTI),
        learning_rate=args.learning_rate,
        momentum=args.momentum,
        epochs=args.epochs,
        patches_per_shape=args.patches_per_shape,
        seed=args.seed,
        k=args.k,
        labels=label_config(args),
        checkpoint_every=args.checkpoint_every,
        checkpoint_path=args.checkpoint,
        workers=args.workers,
        plane_loss=args.plane_loss,
    )


def _write_history(args, history) -> None:
    if args.history:
        export_service.write_loss_history(history, args.history)
    for record in history:
        print(f"epoch={record.epoch} L_normal={record.l_normal:.6f} L_main={record.l_main:.6f} L_total={record.l_total:.6f}")


@router.command(
    "train-single",
    help="train a single-scale network (normal regression + plane classification)",
    options=[
        RADIUS,
        option("--batch", dest="batch_size_single", type=validators.positive_int, default=settings.BATCH_SIZE_SINGLE),
        *TRAINING_OPTIONS,
    ],
)
def train_single(args) -> int:
    """Builds the patch set once at --radius, then runs --epochs of shuffled minibatch SGD."""
    try:
        validators.require_output(args.checkpoint, "checkpoint")
        if args.history:
            validators.require_output(args.history, "history")
        config = _train_config(args, [args.radius])
        shapes = _training_shapes(args)
        dataset = training_service.build_dataset(shapes, config)
        model = SingleScaleModel(network_config(args), seed=args.seed)
        _, history = training_service.train_single(dataset, model, config)
        _write_history(args, history)
        return 0
    except (NormalsError, ValidationError):
        raise
    except Exception as e:
        raise NormalsError(f"Failed to train single-scale model: {str(e)}")


@router.command(
    "train-multi",
    help="train a multi-scale network with a learned scale selection",
    options=[
        RADII,
        PRESET,
        option("--batch", dest="batch_size_multi", type=validators.positive_int, default=settings.BATCH_SIZE_MULTI),
        option("--init", nargs="+", default=None,
               help="single-scale checkpoints initialising the subnets, one per radius in order"),
        option("--freeze-subnets", dest="freeze_subnets", action="store_true",
               help="update only the scale network"),
        *TRAINING_OPTIONS,
    ],
)
def train_multi(args) -> int:
    """
    One subnet per radius plus the scale network, trained on
    sum_s v_s L_normal^s + mean_s L_main^s. Subnets start from --init
    checkpoints when given, otherwise from scratch.
    """
    try:
        radii = selected_radii(args)
        init = validators.require_checkpoints(args.init, len(radii))
        if args.freeze_subnets and not init:
            raise UsageError("--freeze-subnets needs pretrained subnets (--init)")
        validators.require_output(args.checkpoint, "checkpoint")
        if args.history:
            validators.require_output(args.history, "history")
        config = _train_config(args, radii)

        if init:
            model = networks.multi_from_checkpoints([str(p) for p in init], radii, seed=args.seed)
        else:
            model = MultiScaleModel(radii, network_config(args), seed=args.seed)
        shapes = _training_shapes(args)
        dataset = training_service.build_dataset(shapes, config)
        _, history = training_service.train_multi(dataset, model, config, freeze_subnets=args.freeze_subnets)
        _write_history(args, history)
        return 0
    except (NormalsError, ValidationError):
        raise
    except Exception as e:
        raise NormalsError(f"Failed to train multi-scale model: {str(e)}")
