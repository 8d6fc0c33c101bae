import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from models.schemas import ConditionFlag
from services.baseline_service import jet_normal, pca_normal
from services.evaluation_service import unoriented_angle


def cap(n=200, degrees=10.0, seed=0):
    """Points on a unit-sphere cap around +z, centered so the query point is the origin."""
    rng = np.random.default_rng(seed)
    theta = np.arccos(rng.uniform(np.cos(np.radians(degrees)), 1.0, size=n))
    phi = rng.uniform(0, 2 * np.pi, size=n)
    points = np.column_stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
    return points - [0.0, 0.0, 1.0]


def tilted_plane(n=300, seed=0):
    rng = np.random.default_rng(seed)
    normal = np.array([1.0, 2.0, 2.0]) / 3.0
    u = np.cross(normal, [1.0, 0.0, 0.0])
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    st = rng.uniform(-1, 1, size=(n, 2))
    return st[:, :1] * u + st[:, 1:] * v, normal


@pytest.mark.parametrize("estimator", [pca_normal, jet_normal])
def test_exact_plane_is_recovered(estimator):
    coords, normal = tilted_plane()
    result = estimator(coords)
    assert result.ok
    assert unoriented_angle(normal, result.normal) < 1e-6
    np.testing.assert_allclose(np.linalg.norm(result.normal), 1.0, atol=1e-9)


def test_pca_on_sphere_cap():
    assert unoriented_angle([0, 0, 1], pca_normal(cap()).normal) < 1.0


def test_jet_is_at_least_as_good_as_pca_on_curved_patch():
    coords = cap(degrees=25.0, seed=1)
    # off-center query: shift so a non-apex point sits at the origin
    query = coords[np.argmax(coords[:, 0])]
    true_normal = query + [0.0, 0.0, 1.0]
    shifted = coords - query
    assert unoriented_angle(true_normal, jet_normal(shifted).normal) <= unoriented_angle(
        true_normal, pca_normal(shifted).normal
    )


def test_jet_equals_pca_direction_on_plane():
    coords, _ = tilted_plane(seed=4)
    assert unoriented_angle(pca_normal(coords).normal, jet_normal(coords).normal) < 1e-6


@pytest.mark.parametrize("estimator", [pca_normal, jet_normal])
def test_rotation_equivariance_and_scale_invariance(estimator):
    coords = cap(degrees=20.0, seed=2)
    rotation = Rotation.from_euler("xyz", [0.3, -1.1, 0.7]).as_matrix()
    base = estimator(coords).normal
    rotated = estimator(coords @ rotation.T).normal
    assert unoriented_angle(rotation @ base, rotated) < np.degrees(1e-6)
    assert unoriented_angle(base, estimator(coords * 37.5).normal) < 1e-6


def test_canonical_sign_points_up():
    coords, _ = tilted_plane()
    assert pca_normal(coords).normal[2] > 0
    assert pca_normal(-coords).normal[2] > 0


@pytest.mark.parametrize("estimator", [pca_normal, jet_normal])
def test_degenerate_inputs_are_flagged(estimator):
    collinear = np.outer(np.linspace(-1, 1, 20), [1.0, 2.0, 3.0])
    assert estimator(collinear).condition_flag == ConditionFlag.DEGENERATE
    assert estimator(np.zeros((2, 3))).condition_flag == ConditionFlag.DEGENERATE
    assert estimator(np.zeros((10, 3))).condition_flag == ConditionFlag.DEGENERATE


def test_jet_rejects_other_orders():
    with pytest.raises(ValueError):
        jet_normal(cap(), order=3)
