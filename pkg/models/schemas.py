from enum import Enum
from functools import cached_property
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


def _split_list(value, cast=float):
    """Accept `1,2,3` strings from key=value config files as lists."""
    if isinstance(value, str):
        return [cast(item) for item in value.replace(" ", "").split(",") if item]
    return value


# Point clouds
class PointCloud(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str = "cloud"
    points: np.ndarray
    normals: Optional[np.ndarray] = None
    eval_indices: Optional[np.ndarray] = None

    @field_validator("points", mode="before")
    @classmethod
    def _points_array(cls, value):
        points = np.asarray(value, dtype=np.float64)
        if points.size == 0:
            return points.reshape(0, 3)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ValueError(f"points must be N x 3, got shape {points.shape}")
        return points

    @field_validator("normals", mode="before")
    @classmethod
    def _normals_array(cls, value):
        if value is None:
            return None
        normals = np.asarray(value, dtype=np.float64)
        return normals.reshape(0, 3) if normals.size == 0 else normals

    @field_validator("eval_indices", mode="before")
    @classmethod
    def _indices_array(cls, value):
        return None if value is None else np.asarray(value, dtype=np.int64).reshape(-1)

    @model_validator(mode="after")
    def _check_consistency(self):
        n = len(self.points)
        if self.normals is not None:
            if self.normals.shape != (n, 3):
                raise ValueError(f"normals count {len(self.normals)} does not match point count {n}")
            lengths = np.linalg.norm(self.normals, axis=1)
            if n and np.abs(lengths - 1.0).max() > 1e-6:
                raise ValueError("normals must have unit length")
        if self.eval_indices is not None and len(self.eval_indices):
            if self.eval_indices.min() < 0 or self.eval_indices.max() >= n:
                raise ValueError(f"eval_indices must lie in [0, {n})")
        return self

    @property
    def n_points(self) -> int:
        return len(self.points)

    @cached_property
    def bbox_diagonal(self) -> float:
        if self.n_points == 0:
            return 0.0
        return float(np.linalg.norm(self.points.max(axis=0) - self.points.min(axis=0)))

    def evaluation_indices(self) -> np.ndarray:
        if self.eval_indices is not None:
            return self.eval_indices
        return np.arange(self.n_points)


class NoiseSpec(BaseModel):
    sigma: float = Field(ge=0)  # fraction of the bounding-box diagonal
    seed: int = 0


class DensityPattern(BaseModel):
    kind: Literal["stripes", "gradient"]
    p_low: float = Field(ge=0, le=1)
    p_high: float = Field(ge=0, le=1)
    axis: int = Field(default=0, ge=0, le=2)
    period: float = Field(default=0.1, gt=0)  # stripes: fraction of the extent along `axis`
    duty: float = Field(default=0.5, gt=0, lt=1)  # stripes: slab share of each period
    seed: int = 0


ShapeKind = Literal["plane", "sphere", "cylinder", "cube", "dihedral"]


# Patches and labels
class Patch(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    center_index: int
    radius: float  # fraction of bbox diagonal
    coords: np.ndarray
    source_indices: np.ndarray
    gt_center_normal: Optional[np.ndarray] = None
    gt_point_normals: Optional[np.ndarray] = None
    plane_labels: Optional[np.ndarray] = None

    @property
    def k(self) -> int:
        return len(self.coords)


class LabelConfig(BaseModel):
    theta: float = Field(default=0.5, gt=0, le=1)
    theta_small: float = Field(default=0.8, gt=0, le=1)
    small_scale_cutoff: float = Field(default=0.03, ge=0)
    epsilon: float = Field(default=0.01, gt=0)

    def effective_theta(self, radius: float) -> float:
        return self.theta_small if radius <= self.small_scale_cutoff else self.theta


# Baselines
class ConditionFlag(str, Enum):
    OK = "ok"
    DEGENERATE = "degenerate"


class BaselineResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    normal: np.ndarray
    eigenvalues: Optional[np.ndarray] = None
    condition_flag: ConditionFlag = ConditionFlag.OK

    @property
    def ok(self) -> bool:
        return self.condition_flag is ConditionFlag.OK


# Networks
class NetworkConfig(BaseModel):
    k: int = Field(default=500, ge=1)
    point_widths: list[int] = [64, 128, 1024]
    qstn_point_widths: list[int] = [64, 128, 1024]
    qstn_head_widths: list[int] = [512, 256]
    normal_head_widths: list[int] = [512, 256]
    plane_head_widths: list[int] = [256]
    scale_hidden: int = Field(default=256, ge=1)
    pooling: Literal["weighted", "mean"] = "weighted"

    @field_validator(
        "point_widths", "qstn_point_widths", "qstn_head_widths", "normal_head_widths", "plane_head_widths",
        mode="before",
    )
    @classmethod
    def _widths(cls, value):
        return _split_list(value, int)

    @field_validator("point_widths", "qstn_point_widths")
    @classmethod
    def _non_empty(cls, value):
        if not value or min(value) < 1:
            raise ValueError("layer widths must be a non-empty list of positive integers")
        return value

    @property
    def feature_width(self) -> int:
        return self.point_widths[-1]

    @classmethod
    def profile(cls, name: str, **overrides) -> "NetworkConfig":
        if name == "full":
            return cls(**overrides)
        if name == "reduced":
            reduced = dict(
                point_widths=[64, 128],
                qstn_point_widths=[32, 64],
                qstn_head_widths=[32],
                normal_head_widths=[64, 32],
                plane_head_widths=[32],
                scale_hidden=32,
            )
            reduced.update(overrides)
            return cls(**reduced)
        raise ValueError(f"unknown architecture profile: {name}")


class NormalPrediction(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    normal: np.ndarray
    plane_probs: np.ndarray
    quaternion: np.ndarray
    scale_weights: Optional[np.ndarray] = None
    selected_scale: Optional[int] = None


# Training
class TrainConfig(BaseModel):
    radii: list[float] = [0.05]
    batch_size_single: int = Field(default=64, ge=1)
    batch_size_multi: int = Field(default=16, ge=1)
    learning_rate: float = Field(default=1e-4, gt=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    epochs: int = Field(default=20, ge=0)
    patches_per_shape: int = Field(default=500, ge=1)
    seed: int = 0
    k: int = Field(default=500, ge=1)
    labels: LabelConfig = LabelConfig()
    checkpoint_every: Optional[int] = Field(default=None, ge=1)
    checkpoint_path: Optional[str] = None
    workers: int = Field(default=1, ge=1)
    # off: normal regression only, plane heads stay untrained
    plane_loss: bool = True

    @field_validator("radii", mode="before")
    @classmethod
    def _radii_list(cls, value):
        return _split_list(value, float)

    @field_validator("radii")
    @classmethod
    def _radii_sorted(cls, value):
        if not value:
            raise ValueError("radii must not be empty")
        if any(r <= 0 for r in value) or any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("radii must be positive and strictly increasing")
        return value


class EpochLoss(BaseModel):
    epoch: int
    l_normal: float
    l_main: float
    l_total: float


# Evaluation
class ShapeEvaluation(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str
    category: Optional[str] = None
    rmse: float
    angles: np.ndarray
    n_evaluated: int
    n_excluded: int = 0
    scale_counts: Optional[list[int]] = None


class EvalReport(BaseModel):
    estimator: str
    per_shape: dict[str, float]
    per_category: dict[str, float] = {}
    overall_average: float
    exclusions: dict[str, int] = {}
    scale_histogram: Optional[list[int]] = None
    scale_histogram_by_category: Optional[dict[str, list[int]]] = None

    @field_validator("per_shape", "per_category")
    @classmethod
    def _rmse_range(cls, value):
        for name, rmse in value.items():
            if not 0.0 <= rmse <= 90.0:
                raise ValueError(f"RMSE for {name} outside [0, 90]: {rmse}")
        return value
