import numpy as np
import pytest

from models.schemas import NetworkConfig
from services import pointcloud_service


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """Narrow network for fast forward/backward passes."""
    return NetworkConfig(
        k=24,
        point_widths=[8, 16],
        qstn_point_widths=[8, 12],
        qstn_head_widths=[8],
        normal_head_widths=[12],
        plane_head_widths=[8],
        scale_hidden=8,
    )


@pytest.fixture
def plane_cloud():
    return pointcloud_service.gen_shape("plane", n_points=2000, seed=3)


@pytest.fixture
def sphere_cloud():
    return pointcloud_service.gen_shape("sphere", n_points=10000, seed=5)


@pytest.fixture
def dihedral_cloud():
    return pointcloud_service.gen_shape("dihedral", {"angle": 90.0}, n_points=4000, seed=7)


@pytest.fixture
def patch_batch(rng):
    """Random patch coordinates inside the unit ball, shape (B, K, 3)."""
    coords = rng.normal(size=(3, 24, 3))
    coords /= np.maximum(1.0, np.linalg.norm(coords, axis=-1, keepdims=True))
    coords[:, 0] = 0.0
    return coords
