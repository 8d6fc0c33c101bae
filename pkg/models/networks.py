"""
Patch networks for normal estimation with a plane-point auxiliary task.

SingleScaleModel: quaternion spatial transformer -> shared per-point MLP ->
weighted mean pooling -> normal regression head, plus a per-point plane
classifier fed with [point feature | global feature].

MultiScaleModel: one SingleScaleModel per radius and a scale network that
turns the concatenated global features into softmax weights over scales.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from exceptions import CheckpointError, DegenerateError, PatchError
from models.schemas import NetworkConfig, NormalPrediction
from services import autodiff as ad
from services.autodiff import Tensor

logger = logging.getLogger(__name__)

PROB_CLAMP = 1e-7
QUAT_MIN_NORM = 1e-12
IDENTITY_QUATERNION = np.array([1.0, 0.0, 0.0, 0.0])


# Quaternion -> rotation ---------------------------------------------------------

def _rotation_terms(q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Homogeneous quaternion matrix M(q) (..., 3, 3) and dM/dq (..., 3, 3, 4)."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.stack(
        [
            np.stack([w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
            np.stack([2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)], axis=-1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z], axis=-1),
        ],
        axis=-2,
    )
    dw = np.stack([np.stack([w, -z, y], -1), np.stack([z, w, -x], -1), np.stack([-y, x, w], -1)], -2)
    dx = np.stack([np.stack([x, y, z], -1), np.stack([y, -x, -w], -1), np.stack([z, w, -x], -1)], -2)
    dy = np.stack([np.stack([-y, x, w], -1), np.stack([x, y, z], -1), np.stack([-w, z, -y], -1)], -2)
    dz = np.stack([np.stack([-z, -w, x], -1), np.stack([w, -z, y], -1), np.stack([x, y, z], -1)], -2)
    return m, 2.0 * np.stack([dw, dx, dy, dz], axis=-1)


def quat_to_rot(q) -> Tensor:
    """
    Rotation matrix of quaternion (w, x, y, z), normalised internally:
    R = M(q) / |q|^2, so q and -q give the same matrix.
    """
    q = ad.as_tensor(q)
    if q.shape[-1] != 4:
        raise DegenerateError(f"quaternion must have 4 components, got shape {q.shape}")
    sq = (q.data * q.data).sum(axis=-1)
    if np.any(np.sqrt(sq) < QUAT_MIN_NORM):
        raise DegenerateError("quaternion norm below 1e-12")
    m, dm = _rotation_terms(q.data)
    s = sq[..., None, None]
    rot = m / s

    def backward_fn(g):
        # dR/dq_k = dM/dq_k / s - M * 2 q_k / s^2
        direct = np.einsum("...ij,...ijk->...k", g, dm) / sq[..., None]
        through_norm = (g * m).sum(axis=(-2, -1))[..., None] * 2.0 * q.data / (sq * sq)[..., None]
        return (direct - through_norm,)

    return ad.custom_op(rot, (q,), backward_fn, "quat_to_rot")


# Layers ---------------------------------------------------------------------------

class Linear:
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / np.sqrt(fan_in)
        self.weight = ad.parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        self.bias = ad.parameter(rng.uniform(-bound, bound, size=(fan_out,))) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = ad.matmul(x, self.weight)
        return out if self.bias is None else ad.add(out, self.bias)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        params = {f"{prefix}.weight": self.weight}
        if self.bias is not None:
            params[f"{prefix}.bias"] = self.bias
        return params


class Mlp:
    """Stack of Linear layers with ReLU between them (and after the last one if `final_relu`)."""

    def __init__(self, name: str, widths: Sequence[int], rng: np.random.Generator, final_relu: bool = False):
        self.name = name
        self.layers = [Linear(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]
        self.final_relu = final_relu

    def __call__(self, x: Tensor) -> Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last or self.final_relu:
                x = ad.relu(x)
            if not np.isfinite(x.data).all():
                raise DegenerateError(f"non-finite activations in layer {self.name}.{i}")
        return x

    def parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for i, layer in enumerate(self.layers):
            params.update(layer.parameters(f"{self.name}.{i}"))
        return params


def _as_batch(coords) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64)
    return coords[None] if coords.ndim == 2 else coords


# Single scale ---------------------------------------------------------------------

@dataclass
class SingleOutput:
    normal: Tensor  # (B, 3), input frame
    plane_probs: Tensor  # (B, K)
    quaternion: Tensor  # (B, 4)
    global_feature: Tensor  # (B, F)
    pool_weights: np.ndarray  # (B, K)

    def predictions(self) -> list[NormalPrediction]:
        return [
            NormalPrediction(normal=n, plane_probs=p, quaternion=q / np.linalg.norm(q))
            for n, p, q in zip(self.normal.data, self.plane_probs.data, self.quaternion.data)
        ]


class SingleScaleModel:
    def __init__(self, config: Optional[NetworkConfig] = None, seed: int = 0):
        self.config = config or NetworkConfig()
        cfg = self.config
        rng = np.random.default_rng(seed)
        width = cfg.feature_width

        self.qstn_points = Mlp("qstn.points", [3] + cfg.qstn_point_widths, rng, final_relu=True)
        self.qstn_head = Mlp("qstn.head", [cfg.qstn_point_widths[-1]] + cfg.qstn_head_widths + [4], rng)
        # start from an unrotated frame
        self.qstn_head.layers[-1].bias.data = IDENTITY_QUATERNION.copy()
        self.point_mlp = Mlp("points", [3] + cfg.point_widths, rng, final_relu=True)
        # no bias: the softmax over points ignores a constant shift
        self.pool_weight = Linear(width, 1, rng, bias=False) if cfg.pooling == "weighted" else None
        self.normal_head = Mlp("normal_head", [width] + cfg.normal_head_widths + [3], rng)
        self.plane_head = Mlp("plane_head", [2 * width] + cfg.plane_head_widths + [1], rng)

    def parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        params.update(self.qstn_points.parameters())
        params.update(self.qstn_head.parameters())
        params.update(self.point_mlp.parameters())
        if self.pool_weight is not None:
            params.update(self.pool_weight.parameters("pool_weight"))
        params.update(self.normal_head.parameters())
        params.update(self.plane_head.parameters())
        return params

    def copy(self) -> "SingleScaleModel":
        clone = SingleScaleModel(self.config)
        ad.assign_parameters(clone.parameters(), {k: v.data for k, v in self.parameters().items()})
        return clone

    def forward(self, coords) -> SingleOutput:
        x = Tensor(_as_batch(coords))
        batch, k, _ = x.shape

        # canonical pose
        q = self.qstn_head(ad.mean(self.qstn_points(x), axis=1))
        rot = quat_to_rot(q)
        rotated = ad.matmul(x, ad.transpose(rot))

        features = self.point_mlp(rotated)
        if self.pool_weight is not None:
            logits = ad.reshape(self.pool_weight(features), (batch, k))
            weights = ad.softmax(logits)
            pooled = ad.weighted_mean(features, ad.reshape(weights, (batch, k, 1)), axis=1)
            pool_weights = weights.data
        else:
            pooled = ad.mean(features, axis=1)
            pool_weights = np.full((batch, k), 1.0 / k)

        canonical = ad.l2_normalize(self.normal_head(pooled))
        normal = ad.bmv(ad.transpose(rot), canonical)

        broadcast = ad.expand(ad.reshape(pooled, (batch, 1, self.config.feature_width)), features.shape)
        plane_logits = self.plane_head(ad.concat([features, broadcast], axis=-1))
        plane_probs = ad.sigmoid(ad.reshape(plane_logits, (batch, k)))

        return SingleOutput(
            normal=normal, plane_probs=plane_probs, quaternion=q, global_feature=pooled, pool_weights=pool_weights
        )

    __call__ = forward


# Multi scale ------------------------------------------------------------------

@dataclass
class MultiOutput:
    scales: list[SingleOutput]
    scale_weights: Tensor  # (B, S)
    selected_scale: np.ndarray  # (B,)
    normal: np.ndarray = field(init=False)  # (B, 3), normal of the selected subnet

    def __post_init__(self):
        stacked = np.stack([out.normal.data for out in self.scales], axis=1)
        self.normal = stacked[np.arange(len(stacked)), self.selected_scale]

    def predictions(self) -> list[NormalPrediction]:
        preds = []
        for b, s in enumerate(self.selected_scale):
            chosen = self.scales[s]
            q = chosen.quaternion.data[b]
            preds.append(
                NormalPrediction(
                    normal=self.normal[b],
                    plane_probs=chosen.plane_probs.data[b],
                    quaternion=q / np.linalg.norm(q),
                    scale_weights=self.scale_weights.data[b],
                    selected_scale=int(s),
                )
            )
        return preds


class MultiScaleModel:
    def __init__(
        self,
        radii: Sequence[float],
        config: Optional[NetworkConfig] = None,
        seed: int = 0,
        subnets: Optional[Sequence[SingleScaleModel]] = None,
    ):
        radii = [float(r) for r in radii]
        if not radii or any(b <= a for a, b in zip(radii, radii[1:])):
            raise ValueError("radii must be non-empty and strictly increasing")
        self.radii = radii
        if subnets is None:
            self.config = config or NetworkConfig()
            subnets = [SingleScaleModel(self.config, seed=seed + 1 + s) for s in range(len(radii))]
        elif len(subnets) != len(radii):
            raise PatchError(f"{len(subnets)} subnets for {len(radii)} radii")
        else:
            self.config = subnets[0].config
        self.subnets = list(subnets)
        rng = np.random.default_rng(seed)
        n_scales = len(radii)
        self.scale_net = Mlp("scale_net", [n_scales * self.config.feature_width, self.config.scale_hidden, n_scales], rng)

    @property
    def n_scales(self) -> int:
        return len(self.radii)

    def subnet_parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for s, subnet in enumerate(self.subnets):
            params.update({f"subnet{s}.{name}": p for name, p in subnet.parameters().items()})
        return params

    def parameters(self) -> dict[str, Tensor]:
        params = self.subnet_parameters()
        params.update(self.scale_net.parameters())
        return params

    def forward(self, coords_per_scale: Sequence) -> MultiOutput:
        if len(coords_per_scale) != self.n_scales:
            raise PatchError(f"expected {self.n_scales} patch sets (one per radius), got {len(coords_per_scale)}")
        outputs = [subnet.forward(coords) for subnet, coords in zip(self.subnets, coords_per_scale)]
        features = ad.concat([out.global_feature for out in outputs], axis=-1)
        weights = ad.softmax(self.scale_net(features))
        # argmax keeps the first maximum: ties go to the smallest radius
        selected = np.argmax(weights.data, axis=-1)
        return MultiOutput(scales=outputs, scale_weights=weights, selected_scale=selected)

    __call__ = forward


# Losses -------------------------------------------------------------------------

def loss_normal(predicted, target, reduce: bool = True) -> Tensor:
    """Unoriented Euclidean loss min(|n - n_hat|, |n + n_hat|), averaged over the batch."""
    predicted, target = ad.as_tensor(predicted), ad.as_tensor(target)
    distance = ad.minimum(ad.norm(ad.sub(target, predicted)), ad.norm(ad.add(target, predicted)))
    return ad.mean(distance) if reduce else distance


def loss_plane(probs, labels) -> Tensor:
    """Binary cross-entropy over points and patches, probabilities clamped to [1e-7, 1 - 1e-7]."""
    labels = np.asarray(labels, dtype=np.float64)
    p = ad.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    log_likelihood = ad.add(ad.mul(labels, ad.log(p)), ad.mul(1.0 - labels, ad.log(ad.sub(1.0, p))))
    return ad.mul(ad.mean(log_likelihood), -1.0)


def loss_total(normal_loss, plane_loss) -> Tensor:
    return ad.add(normal_loss, plane_loss)


def loss_multi(normal_losses: Sequence[Tensor], plane_losses: Sequence[Tensor], scale_weights) -> Tensor:
    """
    sum_s v_s * L_normal^s + sum_s L_main^s / S.

    `normal_losses` are per-sample vectors (B,) and `scale_weights` is (B, S),
    so every patch weights the scales by its own v; the result is averaged
    over the batch.
    """
    weights = ad.as_tensor(scale_weights)
    n_scales = len(normal_losses)
    if len(plane_losses) != n_scales or weights.shape[-1] != n_scales:
        raise PatchError(f"loss_multi: {n_scales} normal losses, {len(plane_losses)} plane losses, weights {weights.shape}")
    return ad.add(regression_term(normal_losses, weights), plane_term(plane_losses))


def regression_term(normal_losses: Sequence[Tensor], scale_weights) -> Tensor:
    stacked = ad.concat([ad.reshape(loss, (-1, 1)) for loss in normal_losses], axis=-1)
    return ad.mean(ad.reduce_sum(ad.mul(ad.as_tensor(scale_weights), stacked), axis=-1))


def plane_term(plane_losses: Sequence[Tensor]) -> Tensor:
    share = 1.0 / len(plane_losses)
    term = ad.mul(plane_losses[0], share)
    for loss in plane_losses[1:]:
        term = ad.add(term, ad.mul(loss, share))
    return term


def plane_accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean((np.asarray(probs) > 0.5) == np.asarray(labels).astype(bool)))


# Checkpoints --------------------------------------------------------------------

def save_model(path: str, model, extra: Optional[dict] = None) -> None:
    metadata = {"config": model.config.model_dump(), **(extra or {})}
    if isinstance(model, MultiScaleModel):
        metadata.update(kind="multi", radii=model.radii)
    else:
        metadata.update(kind="single")
    ad.save_parameters(path, model.parameters(), metadata)


def load_model(path: str):
    arrays, metadata = ad.load_parameters(path)
    if "config" not in metadata or metadata.get("kind") not in ("single", "multi"):
        raise CheckpointError(f"{path}: not a model checkpoint")
    config = NetworkConfig(**metadata["config"])
    if metadata["kind"] == "multi":
        model = MultiScaleModel(metadata["radii"], config)
    else:
        model = SingleScaleModel(config)
    ad.assign_parameters(model.parameters(), arrays)
    logger.info("loaded %s-scale model from %s", metadata["kind"], path)
    return model, metadata


def multi_from_checkpoints(paths: Sequence[str], radii: Sequence[float], seed: int = 0) -> MultiScaleModel:
    subnets = []
    for path in paths:
        model, _ = load_model(path)
        if not isinstance(model, SingleScaleModel):
            raise CheckpointError(f"{path}: expected a single-scale checkpoint")
        subnets.append(model)
    return MultiScaleModel(radii, seed=seed, subnets=subnets)
