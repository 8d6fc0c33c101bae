"""
Patch datasets and the minibatch SGD loops for single- and multi-scale models.

Patches and plane labels are computed once in `build_dataset`; every epoch
only reshuffles indices. Shuffling is seeded from (config.seed, epoch), so a
run is a pure function of the dataset, the initial parameters and the config.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from exceptions import DataError, DegenerateError, TrainingError
from models import networks
from models.networks import MultiScaleModel, SingleScaleModel
from models.schemas import EpochLoss, PointCloud, TrainConfig
from services import autodiff as ad
from services.autodiff import Tensor
from services.optimizer import SgdState, sgd_step
from services.patch_service import build_index, extract_patches

logger = logging.getLogger(__name__)

EpochCallback = Callable[[EpochLoss], None]


@dataclass
class PatchDataset:
    radii: list[float]
    coords: list[np.ndarray]  # per radius: (N, K, 3)
    labels: list[np.ndarray]  # per radius: (N, K)
    normals: np.ndarray  # (N, 3) ground truth at the centers
    shape_ids: np.ndarray  # (N,) index into shape_names
    center_indices: np.ndarray  # (N,)
    shape_names: list[str]

    def __len__(self) -> int:
        return len(self.normals)

    def batch(self, rows: np.ndarray, radius_index: int = 0) -> dict[str, np.ndarray]:
        return {
            "coords": self.coords[radius_index][rows],
            "labels": self.labels[radius_index][rows],
            "normals": self.normals[rows],
        }

    def multi_batch(self, rows: np.ndarray) -> dict:
        return {
            "coords": [c[rows] for c in self.coords],
            "labels": [lab[rows] for lab in self.labels],
            "normals": self.normals[rows],
        }

    def subset(self, rows: np.ndarray) -> "PatchDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return PatchDataset(
            radii=list(self.radii),
            coords=[c[rows] for c in self.coords],
            labels=[lab[rows] for lab in self.labels],
            normals=self.normals[rows],
            shape_ids=self.shape_ids[rows],
            center_indices=self.center_indices[rows],
            shape_names=list(self.shape_names),
        )


def sample_centers(cloud: PointCloud, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform center points; without replacement unless the cloud is too small."""
    return rng.choice(cloud.n_points, size=count, replace=count > cloud.n_points)


def build_dataset(shapes: Sequence[PointCloud], config: TrainConfig) -> PatchDataset:
    if not shapes:
        raise DataError("no shapes to build a training set from")
    for cloud in shapes:
        if cloud.normals is None:
            raise DataError(f"shape {cloud.name} has no ground-truth normals")

    coords: list[list[np.ndarray]] = [[] for _ in config.radii]
    labels: list[list[np.ndarray]] = [[] for _ in config.radii]
    normals, shape_ids, centers_all = [], [], []

    for shape_id, cloud in enumerate(shapes):
        rng = np.random.default_rng([config.seed, shape_id])
        centers = sample_centers(cloud, config.patches_per_shape, rng)
        seeds = rng.integers(0, 2**31 - 1, size=len(centers))
        index = build_index(cloud.points)
        for r_idx, radius in enumerate(config.radii):
            patches = extract_patches(
                cloud, centers, radius, k=config.k, seeds=seeds,
                label_config=config.labels, index=index, workers=config.workers,
            )
            coords[r_idx].append(np.stack([p.coords for p in patches]))
            labels[r_idx].append(np.stack([p.plane_labels for p in patches]).astype(np.float64))
        normals.append(cloud.normals[centers])
        shape_ids.append(np.full(len(centers), shape_id))
        centers_all.append(centers)

    dataset = PatchDataset(
        radii=list(config.radii),
        coords=[np.concatenate(c) for c in coords],
        labels=[np.concatenate(lab) for lab in labels],
        normals=np.concatenate(normals),
        shape_ids=np.concatenate(shape_ids),
        center_indices=np.concatenate(centers_all),
        shape_names=[cloud.name for cloud in shapes],
    )
    logger.info(
        "built dataset: %d patches from %d shapes at radii %s (k=%d)",
        len(dataset), len(shapes), dataset.radii, config.k,
    )
    return dataset


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Shuffled index batches for one epoch; the last batch may be partial."""
    order = np.random.default_rng([seed, epoch]).permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def trainable_parameters(params: dict[str, Tensor], config: TrainConfig) -> dict[str, Tensor]:
    """Parameters the optimizer updates; plane heads are left out when the plane loss is off."""
    if config.plane_loss:
        return params
    return {name: p for name, p in params.items() if "plane_head." not in name}


def _zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.zero_grad()


def _checkpoint(model, config: TrainConfig, epoch: int, extra: dict) -> None:
    networks.save_model(config.checkpoint_path, model, {"epoch": epoch, **extra})
    logger.info("checkpoint written to %s (epoch %d)", config.checkpoint_path, epoch)


def _run_epochs(
    model,
    dataset: PatchDataset,
    config: TrainConfig,
    batch_size: int,
    trainable: dict[str, Tensor],
    step_losses: Callable[[np.ndarray], tuple[Tensor, Tensor, Tensor]],
    on_epoch: Optional[EpochCallback],
    extra: Optional[dict] = None,
) -> list[EpochLoss]:
    if len(dataset) == 0:
        raise DataError("training set is empty")
    all_params = model.parameters()
    state = SgdState(learning_rate=config.learning_rate, momentum=config.momentum)
    history: list[EpochLoss] = []

    for epoch in range(1, config.epochs + 1):
        sums = np.zeros(3)
        for b, rows in enumerate(epoch_batches(len(dataset), batch_size, config.seed, epoch), start=1):
            try:
                l_normal, l_main, l_total = step_losses(rows)
            except DegenerateError as e:
                raise TrainingError(e.detail, epoch=epoch, batch=b) from e
            if not np.isfinite(l_total.item()):
                raise TrainingError("loss is not finite", epoch=epoch, batch=b)
            _zero_grads(all_params)
            ad.backward(l_total)
            sgd_step(trainable, state)
            logger.debug("epoch %d batch %d: L_total=%.6f", epoch, b, l_total.item())
            sums += len(rows) * np.array([l_normal.item(), l_main.item(), l_total.item()])

        means = sums / len(dataset)
        record = EpochLoss(epoch=epoch, l_normal=means[0], l_main=means[1], l_total=means[2])
        history.append(record)
        logger.info(
            "epoch %d/%d: L_normal=%.6f L_main=%.6f L_total=%.6f",
            epoch, config.epochs, record.l_normal, record.l_main, record.l_total,
        )
        if on_epoch is not None:
            on_epoch(record)
        if config.checkpoint_path and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            _checkpoint(model, config, epoch, extra or {})

    # final weights, unless the last periodic checkpoint already holds them
    if config.checkpoint_path and not (
        config.epochs and config.checkpoint_every and config.epochs % config.checkpoint_every == 0
    ):
        _checkpoint(model, config, config.epochs, extra or {})
    return history


def train_single(
    dataset: PatchDataset,
    model: SingleScaleModel,
    config: TrainConfig,
    radius_index: int = 0,
    on_epoch: Optional[EpochCallback] = None,
) -> tuple[SingleScaleModel, list[EpochLoss]]:
    """Minimise L_normal + L_main at one radius of the dataset."""

    def step_losses(rows):
        batch = dataset.batch(rows, radius_index)
        out = model.forward(batch["coords"])
        l_normal = networks.loss_normal(out.normal, batch["normals"])
        if not config.plane_loss:
            return l_normal, Tensor(0.0), l_normal
        l_main = networks.loss_plane(out.plane_probs, batch["labels"])
        return l_normal, l_main, networks.loss_total(l_normal, l_main)

    radius = dataset.radii[radius_index]
    logger.info(
        "training single-scale model at radius %s for %d epochs (plane loss %s)",
        radius, config.epochs, "on" if config.plane_loss else "off",
    )
    history = _run_epochs(
        model, dataset, config, config.batch_size_single, trainable_parameters(model.parameters(), config),
        step_losses, on_epoch, extra={"radius": radius, "plane_loss": config.plane_loss},
    )
    return model, history


def train_multi(
    dataset: PatchDataset,
    model: MultiScaleModel,
    config: TrainConfig,
    freeze_subnets: bool = False,
    on_epoch: Optional[EpochCallback] = None,
) -> tuple[MultiScaleModel, list[EpochLoss]]:
    """
    Minimise sum_s v_s L_normal^s + sum_s L_main^s / S. With `freeze_subnets`
    only the scale network is updated.
    """
    if len(dataset.radii) != model.n_scales or not np.allclose(dataset.radii, model.radii):
        raise DataError(f"dataset radii {dataset.radii} do not match model radii {model.radii}")

    def step_losses(rows):
        batch = dataset.multi_batch(rows)
        out = model.forward(batch["coords"])
        normal_losses = [networks.loss_normal(s.normal, batch["normals"], reduce=False) for s in out.scales]
        l_normal = networks.regression_term(normal_losses, out.scale_weights)
        if not config.plane_loss:
            return l_normal, Tensor(0.0), l_normal
        plane_losses = [networks.loss_plane(s.plane_probs, lab) for s, lab in zip(out.scales, batch["labels"])]
        l_main = networks.plane_term(plane_losses)
        return l_normal, l_main, ad.add(l_normal, l_main)

    trainable = model.scale_net.parameters() if freeze_subnets else trainable_parameters(model.parameters(), config)
    logger.info(
        "training %d-scale model (radii %s, subnets %s) for %d epochs",
        model.n_scales, model.radii, "frozen" if freeze_subnets else "trainable", config.epochs,
    )
    history = _run_epochs(
        model, dataset, config, config.batch_size_multi, trainable, step_losses, on_epoch,
        extra={"plane_loss": config.plane_loss},
    )
    return model, history
