import numpy as np
import pytest

import dataset
from exceptions import DataError, UsageError
from services import pointcloud_service


@pytest.fixture
def pcpnet_root(tmp_path):
    plane = pointcloud_service.gen_shape("plane", n_points=200, seed=1)
    sphere = pointcloud_service.gen_shape("sphere", n_points=200, seed=2)
    pointcloud_service.save_cloud(plane, tmp_path / "plane.xyz")
    pointcloud_service.save_cloud(sphere, tmp_path / "sphere.xyz")
    (tmp_path / "testset_no_noise.txt").write_text("plane\nsphere\n")
    (tmp_path / "testset_high_noise.txt").write_text("sphere\n")
    yield tmp_path
    dataset.close_dataset()


def test_split_shapes(pcpnet_root):
    store = dataset.DatasetStore(str(pcpnet_root))
    assert store.split("testset_no_noise") == ["plane", "sphere"]
    shapes = store.load_split_shapes("testset_no_noise")
    assert [(c, s.name) for c, s in shapes] == [("testset_no_noise", "plane"), ("testset_no_noise", "sphere")]
    assert shapes[0][1].normals is not None


def test_benchmark_skips_missing_splits(pcpnet_root):
    shapes = dataset.DatasetStore(str(pcpnet_root)).load_benchmark()
    assert [c for c, _ in shapes] == ["no_noise", "no_noise", "large_noise"]


def test_missing_shape_and_root(pcpnet_root, tmp_path):
    (pcpnet_root / "broken.txt").write_text("ghost\n")
    with pytest.raises(DataError, match="ghost"):
        dataset.DatasetStore(str(pcpnet_root)).load_split_shapes("broken")
    with pytest.raises(UsageError):
        dataset.DatasetStore(str(tmp_path / "nowhere"))


def test_store_is_reused(pcpnet_root):
    store = dataset.open_dataset(str(pcpnet_root))
    assert dataset.open_dataset(str(pcpnet_root)) is store
    dataset.close_dataset()
    assert dataset.open_dataset(str(pcpnet_root)) is not store


def test_benchmark_directory(tmp_path):
    cloud = pointcloud_service.gen_shape("cube", n_points=300, seed=3)
    for category in ("no_noise", "stripes"):
        (tmp_path / category).mkdir()
        pointcloud_service.save_cloud(cloud, tmp_path / category / "cube.xyz")
    shapes = dataset.load_benchmark_dir(str(tmp_path))
    assert [c for c, _ in shapes] == ["no_noise", "stripes"]
    np.testing.assert_allclose(shapes[0][1].points, cloud.points, atol=1e-11)


def test_resolve_shapes_order_of_preference(pcpnet_root, tmp_path):
    explicit = dataset.resolve_shapes([str(pcpnet_root / "plane.xyz")], dataset_root=str(pcpnet_root))
    assert [(c, s.name) for c, s in explicit] == [(None, "plane")]

    from_split = dataset.resolve_shapes(dataset_root=str(pcpnet_root), splits=["testset_high_noise"])
    assert [s.name for _, s in from_split] == ["sphere"]

    with pytest.raises(UsageError, match="--split"):
        dataset.resolve_shapes(dataset_root=str(pcpnet_root))
    with pytest.raises(UsageError):
        dataset.resolve_shapes(benchmark_dir=str(tmp_path / "nowhere"))
