import logging

import numpy as np

from models.schemas import BaselineResult, ConditionFlag

logger = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-12
JET_DAMPING = 1e-12
JET_MAX_CONDITION = 1e12


def _canonical_sign(normal: np.ndarray) -> np.ndarray:
    """Positive z; ties fall back to positive y, then x."""
    for axis in (2, 1, 0):
        if normal[axis] > 0:
            return normal
        if normal[axis] < 0:
            return -normal
    return normal


def _principal_frame(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    centered = coords - coords.mean(axis=0)
    covariance = centered.T @ centered / len(coords)
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    return np.clip(eigenvalues, 0.0, None), eigenvectors


def pca_normal(coords: np.ndarray) -> BaselineResult:
    """Normal = eigenvector of the smallest eigenvalue of the centered covariance."""
    coords = np.asarray(coords, dtype=np.float64)
    if len(coords) < 3:
        return BaselineResult(
            normal=np.array([0.0, 0.0, 1.0]), eigenvalues=np.zeros(3), condition_flag=ConditionFlag.DEGENERATE
        )
    eigenvalues, eigenvectors = _principal_frame(coords)
    normal = _canonical_sign(eigenvectors[:, 0] / np.linalg.norm(eigenvectors[:, 0]))
    # rank < 2: collinear or coincident points
    degenerate = eigenvalues[2] <= 0 or eigenvalues[1] <= RANK_TOLERANCE * eigenvalues[2]
    return BaselineResult(
        normal=normal,
        eigenvalues=eigenvalues,
        condition_flag=ConditionFlag.DEGENERATE if degenerate else ConditionFlag.OK,
    )


def jet_normal(coords: np.ndarray, order: int = 2) -> BaselineResult:
    """
    Least-squares height field h(u, v) over the PCA frame, expressed around
    the coordinate origin (the query point). The normal is the gradient
    direction of the fitted surface at the origin.
    """
    if order != 2:
        raise ValueError(f"only order-2 jets are supported, got {order}")
    coords = np.asarray(coords, dtype=np.float64)
    pca = pca_normal(coords)
    if len(coords) < 6 or not pca.ok:
        return BaselineResult(normal=pca.normal, eigenvalues=pca.eigenvalues, condition_flag=ConditionFlag.DEGENERATE)

    _, frame = _principal_frame(coords)
    w_axis, v_axis, u_axis = frame[:, 0], frame[:, 1], frame[:, 2]
    # precondition: linear coefficients are invariant to this scaling
    scale = np.linalg.norm(coords, axis=1).max()
    local = coords / scale
    u, v, h = local @ u_axis, local @ v_axis, local @ w_axis

    design = np.column_stack([np.ones_like(u), u, v, u * u, u * v, v * v])
    normal_matrix = design.T @ design + JET_DAMPING * np.eye(6)
    if np.linalg.cond(normal_matrix) > JET_MAX_CONDITION:
        logger.debug("jet fit ill-conditioned; falling back to PCA")
        return BaselineResult(normal=pca.normal, eigenvalues=pca.eigenvalues, condition_flag=ConditionFlag.DEGENERATE)
    a = np.linalg.solve(normal_matrix, design.T @ h)

    normal = -a[1] * u_axis - a[2] * v_axis + w_axis
    normal = _canonical_sign(normal / np.linalg.norm(normal))
    return BaselineResult(normal=normal, eigenvalues=pca.eigenvalues)
