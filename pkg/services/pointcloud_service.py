"""
Point-cloud I/O in the PCPNet text layout, synthetic shapes with analytic
normals, and the noise / density perturbations used for the test categories.
"""

import logging
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from plyfile import PlyData, PlyElement

from exceptions import DataError, ParseError
from models.schemas import DensityPattern, NoiseSpec, PointCloud, ShapeKind

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

HEATMAP_MAX_DEGREES = 60.0
HEATMAP_LOW = np.array([0.0, 0.0, 255.0])  # blue
HEATMAP_HIGH = np.array([255.0, 255.0, 0.0])  # yellow
LABEL_COLORS = {
    True: (220, 30, 30),  # plane point
    False: (190, 190, 190),  # error point
}
COORD_FORMAT = "%.12g"
MIN_POINTS = 100

# Test categories: noise levels and the two density patterns
NOISE_LEVELS = {
    "no_noise": 0.0,
    "small_noise": 0.00125,
    "middle_noise": 0.0065,
    "large_noise": 0.012,
}


# Text formats -----------------------------------------------------------------

def _read_rows(path: PathLike, width: int, dtype=float) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise ParseError(str(path), "file not found")
    rows = []
    with open(path, "r") as fh:
        for line_no, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != width:
                raise ParseError(str(path), f"expected {width} value(s), found {len(tokens)}", line_no)
            try:
                rows.append([dtype(token) for token in tokens])
            except ValueError:
                raise ParseError(str(path), f"non-numeric token in {line.strip()!r}", line_no) from None
    if not rows:
        raise ParseError(str(path), "empty file")
    return np.asarray(rows, dtype=np.float64 if dtype is float else np.int64)


def load_xyz(path: PathLike, name: Optional[str] = None) -> PointCloud:
    points = _read_rows(path, 3)
    return PointCloud(name=name or Path(path).stem, points=points)


def load_normals(path: PathLike, cloud: PointCloud) -> PointCloud:
    normals = _read_rows(path, 3)
    if len(normals) != cloud.n_points:
        raise ParseError(str(path), f"normal count {len(normals)} does not match point count {cloud.n_points}")
    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    if np.any(lengths == 0):
        line = int(np.flatnonzero(lengths[:, 0] == 0)[0]) + 1
        raise ParseError(str(path), "zero-length normal", line)
    return PointCloud(name=cloud.name, points=cloud.points, normals=normals / lengths, eval_indices=cloud.eval_indices)


def load_pidx(path: PathLike, cloud: PointCloud) -> PointCloud:
    indices = _read_rows(path, 1, dtype=int).reshape(-1)
    bad = np.flatnonzero((indices < 0) | (indices >= cloud.n_points))
    if len(bad):
        raise ParseError(str(path), f"index {indices[bad[0]]} outside [0, {cloud.n_points})", int(bad[0]) + 1)
    return PointCloud(name=cloud.name, points=cloud.points, normals=cloud.normals, eval_indices=indices)


def load_split(path: PathLike) -> list[str]:
    path = Path(path)
    if not path.is_file():
        raise ParseError(str(path), "file not found")
    names = [line.strip() for line in path.read_text().splitlines() if line.strip()]
    if not names:
        raise ParseError(str(path), "empty file")
    return names


def load_cloud(xyz_path: PathLike) -> PointCloud:
    """Load `<stem>.xyz` plus the sibling `.normals` / `.pidx` files when they exist."""
    xyz_path = Path(xyz_path)
    cloud = load_xyz(xyz_path)
    normals_path = xyz_path.with_suffix(".normals")
    if normals_path.is_file():
        cloud = load_normals(normals_path, cloud)
    pidx_path = xyz_path.with_suffix(".pidx")
    if pidx_path.is_file():
        cloud = load_pidx(pidx_path, cloud)
    logger.debug("loaded %s: %d points", cloud.name, cloud.n_points)
    return cloud


def write_xyz(cloud: PointCloud, path: PathLike) -> None:
    np.savetxt(path, cloud.points, fmt=COORD_FORMAT)


def write_normals(cloud: PointCloud, path: PathLike) -> None:
    if cloud.normals is None:
        raise DataError(f"{cloud.name} has no normals to write")
    np.savetxt(path, cloud.normals, fmt=COORD_FORMAT)


def write_pidx(cloud: PointCloud, path: PathLike) -> None:
    np.savetxt(path, cloud.evaluation_indices(), fmt="%d")


def save_cloud(cloud: PointCloud, xyz_path: PathLike, with_pidx: bool = False) -> list[Path]:
    xyz_path = Path(xyz_path)
    written = [xyz_path]
    write_xyz(cloud, xyz_path)
    if cloud.normals is not None:
        written.append(xyz_path.with_suffix(".normals"))
        write_normals(cloud, written[-1])
    if with_pidx or cloud.eval_indices is not None:
        written.append(xyz_path.with_suffix(".pidx"))
        write_pidx(cloud, written[-1])
    return written


# Synthetic shapes -------------------------------------------------------------

def _unit_rows(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sample_plane(rng, n, params):
    size = params.get("size", 1.0)
    uv = rng.uniform(-size / 2, size / 2, size=(n, 2))
    points = np.column_stack([uv, np.zeros(n)])
    normals = np.tile([0.0, 0.0, 1.0], (n, 1))
    return points, normals


def _sample_sphere(rng, n, params):
    radius = params.get("radius", 1.0)
    directions = _unit_rows(rng.normal(size=(n, 3)))
    return radius * directions, directions


def _sample_cylinder(rng, n, params):
    radius = params.get("radius", 0.5)
    height = params.get("height", 1.0)
    side_area = 2 * np.pi * radius * height
    cap_area = np.pi * radius**2
    part = rng.choice(3, size=n, p=np.array([side_area, cap_area, cap_area]) / (side_area + 2 * cap_area))
    points = np.empty((n, 3))
    normals = np.empty((n, 3))

    side = part == 0
    phi = rng.uniform(0, 2 * np.pi, size=side.sum())
    points[side] = np.column_stack([radius * np.cos(phi), radius * np.sin(phi), rng.uniform(-height / 2, height / 2, side.sum())])
    normals[side] = np.column_stack([np.cos(phi), np.sin(phi), np.zeros(side.sum())])

    for cap, z in ((1, height / 2), (2, -height / 2)):
        mask = part == cap
        # uniform on a disk: radius ~ sqrt(U)
        rho = radius * np.sqrt(rng.uniform(size=mask.sum()))
        phi = rng.uniform(0, 2 * np.pi, size=mask.sum())
        points[mask] = np.column_stack([rho * np.cos(phi), rho * np.sin(phi), np.full(mask.sum(), z)])
        normals[mask] = [0.0, 0.0, np.sign(z)]
    return points, normals


def _sample_cube(rng, n, params):
    half = params.get("size", 1.0) / 2
    face = rng.integers(0, 6, size=n)
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    points = rng.uniform(-half, half, size=(n, 3))
    points[np.arange(n), axis] = sign * half
    normals = np.zeros((n, 3))
    normals[np.arange(n), axis] = sign
    return points, normals


def _sample_dihedral(rng, n, params):
    angle = params.get("angle", 90.0)
    if not 0.0 < angle < 180.0:
        raise DataError(f"dihedral angle must lie in (0, 180) degrees, got {angle}")
    length = params.get("size", 1.0)
    alpha = np.radians(angle)
    direction = np.array([0.0, np.cos(alpha), np.sin(alpha)])
    normal_b = np.array([0.0, -np.sin(alpha), np.cos(alpha)])

    on_b = rng.uniform(size=n) < 0.5
    x = rng.uniform(-length / 2, length / 2, size=n)
    t = rng.uniform(0, length, size=n)
    points = np.column_stack([x, t, np.zeros(n)])
    points[on_b] = np.column_stack([x[on_b], np.zeros(on_b.sum()), np.zeros(on_b.sum())]) + t[on_b, None] * direction
    normals = np.tile([0.0, 0.0, 1.0], (n, 1))
    normals[on_b] = normal_b
    return points, normals


_SAMPLERS = {
    "plane": _sample_plane,
    "sphere": _sample_sphere,
    "cylinder": _sample_cylinder,
    "cube": _sample_cube,
    "dihedral": _sample_dihedral,
}


def gen_shape(kind: ShapeKind, params: Optional[dict] = None, n_points: int = 10000, seed: int = 0) -> PointCloud:
    """
    Uniform area-weighted surface samples with analytic ground-truth normals.

    params: plane/cube/dihedral `size`; sphere `radius`; cylinder `radius`,
    `height`; dihedral `angle` in degrees (interior angle between the faces).
    """
    if kind not in _SAMPLERS:
        raise DataError(f"unknown shape kind: {kind}")
    if n_points < MIN_POINTS:
        raise DataError(f"n_points must be at least {MIN_POINTS}, got {n_points}")
    rng = np.random.default_rng(seed)
    points, normals = _SAMPLERS[kind](rng, n_points, dict(params or {}))
    name = kind if kind != "dihedral" else f"dihedral{(params or {}).get('angle', 90.0):g}"
    return PointCloud(name=name, points=points, normals=normals)


# Perturbations ----------------------------------------------------------------

def add_noise(cloud: PointCloud, spec: NoiseSpec) -> PointCloud:
    """Gaussian coordinate noise with std sigma * bbox_diagonal; ground truth is left untouched."""
    if cloud.n_points == 0:
        raise DataError("cannot add noise to an empty cloud")
    if spec.sigma == 0:
        points = cloud.points.copy()
    else:
        rng = np.random.default_rng(spec.seed)
        points = cloud.points + rng.normal(0.0, spec.sigma * cloud.bbox_diagonal, size=cloud.points.shape)
    return PointCloud(name=cloud.name, points=points, normals=cloud.normals, eval_indices=cloud.eval_indices)


def retention_probability(cloud: PointCloud, pattern: DensityPattern) -> np.ndarray:
    coord = cloud.points[:, pattern.axis]
    low, high = coord.min(), coord.max()
    extent = max(high - low, 1e-300)
    t = (coord - low) / extent
    if pattern.kind == "gradient":
        return pattern.p_low + (pattern.p_high - pattern.p_low) * t
    phase = np.mod(t / pattern.period, 1.0)
    return np.where(phase < pattern.duty, pattern.p_low, pattern.p_high)


def apply_density(cloud: PointCloud, pattern: DensityPattern) -> PointCloud:
    """Drop points with a position-dependent probability; survivors keep their normals."""
    if cloud.n_points == 0:
        return cloud
    rng = np.random.default_rng(pattern.seed)
    keep = rng.uniform(size=cloud.n_points) < retention_probability(cloud, pattern)
    kept = np.flatnonzero(keep)

    eval_indices = None
    if cloud.eval_indices is not None:
        remap = np.full(cloud.n_points, -1)
        remap[kept] = np.arange(len(kept))
        eval_indices = remap[cloud.eval_indices]
        eval_indices = eval_indices[eval_indices >= 0]

    logger.debug("%s density: kept %d of %d points", pattern.kind, len(kept), cloud.n_points)
    return PointCloud(
        name=cloud.name,
        points=cloud.points[kept],
        normals=None if cloud.normals is None else cloud.normals[kept],
        eval_indices=eval_indices,
    )


def generate_benchmark(base: list[PointCloud], seed: int = 0) -> dict[str, list[PointCloud]]:
    """Six test categories (four noise levels, two density patterns) from clean base shapes."""
    categories: dict[str, list[PointCloud]] = {}
    for offset, (category, sigma) in enumerate(NOISE_LEVELS.items()):
        categories[category] = [
            add_noise(cloud, NoiseSpec(sigma=sigma, seed=seed + 7919 * offset + i)) for i, cloud in enumerate(base)
        ]
    categories["gradient"] = [
        apply_density(cloud, DensityPattern(kind="gradient", p_low=0.1, p_high=1.0, seed=seed + i))
        for i, cloud in enumerate(base)
    ]
    categories["stripes"] = [
        apply_density(cloud, DensityPattern(kind="stripes", p_low=0.1, p_high=1.0, seed=seed + i))
        for i, cloud in enumerate(base)
    ]
    return categories


# PLY export -------------------------------------------------------------------

def heatmap_colors(degrees: np.ndarray) -> np.ndarray:
    t = np.clip(np.asarray(degrees, dtype=np.float64) / HEATMAP_MAX_DEGREES, 0.0, 1.0)[:, None]
    return np.rint(HEATMAP_LOW + t * (HEATMAP_HIGH - HEATMAP_LOW)).astype(np.uint8)


def label_colors(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels).astype(bool)
    return np.where(labels[:, None], LABEL_COLORS[True], LABEL_COLORS[False]).astype(np.uint8)


def write_ply(
    cloud: PointCloud,
    values: np.ndarray,
    path: PathLike,
    colormap: Literal["heatmap", "labels"] = "heatmap",
) -> None:
    """ASCII PLY with x, y, z, red, green, blue; `values` are degrees (heatmap) or booleans (labels)."""
    values = np.asarray(values)
    if len(values) != cloud.n_points:
        raise DataError(f"value count {len(values)} does not match point count {cloud.n_points}")
    if colormap == "heatmap":
        colors = heatmap_colors(values)
    elif colormap == "labels":
        colors = label_colors(values)
    else:
        raise DataError(f"unknown colormap: {colormap}")

    vertices = np.empty(
        cloud.n_points,
        dtype=[("x", "f8"), ("y", "f8"), ("z", "f8"), ("red", "u1"), ("green", "u1"), ("blue", "u1")],
    )
    vertices["x"], vertices["y"], vertices["z"] = cloud.points.T
    vertices["red"], vertices["green"], vertices["blue"] = colors.T
    PlyData([PlyElement.describe(vertices, "vertex")], text=True).write(str(path))
    logger.info("wrote %s (%d vertices, %s colors)", path, cloud.n_points, colormap)


def read_ply(path: PathLike) -> tuple[np.ndarray, np.ndarray]:
    vertex = PlyData.read(str(path))["vertex"]
    points = np.column_stack([vertex["x"], vertex["y"], vertex["z"]]).astype(np.float64)
    colors = np.column_stack([vertex["red"], vertex["green"], vertex["blue"]]).astype(np.uint8)
    return points, colors
