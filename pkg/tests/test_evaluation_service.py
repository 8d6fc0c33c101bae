import numpy as np
import pytest

from exceptions import DataError, DegenerateError
from models.networks import MultiScaleModel, SingleScaleModel
from models.schemas import PointCloud, ShapeEvaluation
from services import evaluation_service as ev
from services.evaluation_service import (
    GroundTruthEstimator, JetEstimator, MultiScaleEstimator, PcaEstimator, SingleScaleEstimator,
)


def subsample(cloud, step=50):
    return PointCloud(name=cloud.name, points=cloud.points, normals=cloud.normals,
                      eval_indices=np.arange(0, cloud.n_points, step))


def shape_eval(name, rmse, category=None, excluded=0, scale_counts=None):
    return ShapeEvaluation(name=name, category=category, rmse=rmse, angles=np.array([rmse]),
                           n_evaluated=1, n_excluded=excluded, scale_counts=scale_counts)


def test_unoriented_angle():
    ten = np.radians(10.0)
    assert ev.unoriented_angle([0, 0, 1], [0, np.sin(ten), np.cos(ten)]) == pytest.approx(10.0, abs=1e-9)
    assert ev.unoriented_angle([0, 0, 1], [0, 0, -3]) == 0.0
    assert ev.unoriented_angle([1, 0, 0], [0, 1, 0]) == pytest.approx(90.0)
    with pytest.raises(DegenerateError):
        ev.unoriented_angle([0, 0, 0], [0, 0, 1])


def test_rmse():
    assert ev.rmse_shape([3.0, 4.0]) == pytest.approx(np.sqrt(12.5))
    assert ev.rmse_shape([0.0]) == 0.0
    with pytest.raises(DataError):
        ev.rmse_shape([])


def test_rmse_is_at_least_the_mean_angle(rng):
    for _ in range(50):
        angles = rng.uniform(0.0, 90.0, size=rng.integers(1, 200))
        assert ev.rmse_shape(angles) >= np.mean(angles) - 1e-12


def test_ground_truth_scores_zero(sphere_cloud):
    evaluation = ev.evaluate(subsample(sphere_cloud), GroundTruthEstimator())
    assert evaluation.rmse == 0.0
    assert evaluation.n_evaluated == 200


def test_pca_on_a_plane_is_exact(plane_cloud):
    assert ev.evaluate(subsample(plane_cloud, 20), PcaEstimator(0.05)).rmse < 1e-6


def test_jet_on_a_sphere_is_accurate(sphere_cloud):
    evaluation = ev.evaluate(subsample(sphere_cloud), JetEstimator(0.05))
    assert evaluation.rmse < 1.0
    assert evaluation.n_excluded == 0


def test_parallel_baseline_matches_serial(sphere_cloud):
    cloud = subsample(sphere_cloud, 200)
    serial = PcaEstimator(0.03).estimate(cloud, cloud.evaluation_indices())
    parallel = PcaEstimator(0.03, workers=4).estimate(cloud, cloud.evaluation_indices())
    np.testing.assert_array_equal(serial.normals, parallel.normals)


def test_isolated_points_are_excluded_and_counted(plane_cloud):
    points = np.vstack([plane_cloud.points, [[3.0, 3.0, 3.0]]])
    normals = np.vstack([plane_cloud.normals, [[0.0, 0.0, 1.0]]])
    cloud = PointCloud(name="outlier", points=points, normals=normals, eval_indices=[0, 1, 2, len(points) - 1])
    evaluation = ev.evaluate(cloud, PcaEstimator(0.02))
    assert evaluation.n_excluded == 1
    assert evaluation.n_evaluated == 3

    lonely = PointCloud(name="lonely", points=points, normals=normals, eval_indices=[len(points) - 1])
    with pytest.raises(DegenerateError):
        ev.evaluate(lonely, PcaEstimator(0.02))


def test_evaluation_needs_ground_truth(plane_cloud):
    with pytest.raises(DataError):
        ev.evaluate(PointCloud(points=plane_cloud.points), PcaEstimator(0.05))
    with pytest.raises(DataError):
        PcaEstimator(0.0)


def test_report_averages_categories_then_overall():
    report = ev.build_report("pca", [
        shape_eval("a", 2.0, "no_noise"),
        shape_eval("b", 4.0, "no_noise"),
        shape_eval("a", 9.0, "large_noise", excluded=2),
    ])
    assert report.per_shape == {"no_noise/a": 2.0, "no_noise/b": 4.0, "large_noise/a": 9.0}
    assert report.per_category == {"no_noise": 3.0, "large_noise": 9.0}
    assert report.overall_average == pytest.approx(6.0)
    assert report.exclusions["large_noise/a"] == 2


def test_report_without_categories_averages_shapes():
    report = ev.build_report("pca", [shape_eval("a", 1.0), shape_eval("b", 2.0), shape_eval("c", 6.0)])
    assert report.per_category == {}
    assert report.overall_average == pytest.approx(3.0)
    with pytest.raises(DataError):
        ev.build_report("pca", [])


def test_scale_histograms_and_fractions():
    report = ev.build_report("multi", [
        shape_eval("a", 1.0, "no_noise", scale_counts=[3, 1, 0]),
        shape_eval("b", 1.0, "no_noise", scale_counts=[1, 1, 2]),
        shape_eval("a", 1.0, "stripes", scale_counts=[0, 0, 5]),
    ])
    assert report.scale_histogram == [4, 2, 7]
    assert report.scale_histogram_by_category == {"no_noise": [4, 2, 2], "stripes": [0, 0, 5]}
    fractions = ev.selection_fractions(report)
    assert fractions["no_noise"] == [0.5, 0.25, 0.25]
    assert fractions["stripes"] == [0.0, 0.0, 1.0]
    assert fractions["all"] == pytest.approx([4 / 13, 2 / 13, 7 / 13])
    assert ev.selection_fractions(ev.build_report("pca", [shape_eval("a", 1.0)])) == {}


def test_radius_sweep_labels_each_report(sphere_cloud):
    shapes = [(None, subsample(sphere_cloud, 100))]
    reports = ev.radius_sweep(shapes, PcaEstimator, [0.02, 0.08])
    assert list(reports) == [0.02, 0.08]
    assert reports[0.02].estimator == "pca@0.02"
    assert ev.best_radius(reports) == min(reports, key=lambda r: reports[r].overall_average)


def test_best_radius_has_lowest_average():
    reports = {r: ev.build_report("pca", [shape_eval("a", value)]) for r, value in [(0.01, 5.0), (0.03, 2.0), (0.05, 3.0)]}
    assert ev.best_radius(reports) == 0.03


def test_learned_estimators_report_selection(sphere_cloud, tiny_config):
    cloud = subsample(sphere_cloud, 500)
    single = SingleScaleEstimator(SingleScaleModel(tiny_config), 0.03, k=tiny_config.k, batch_size=7)
    result = single.estimate(cloud, cloud.evaluation_indices())
    assert result.valid.all()
    np.testing.assert_allclose(np.linalg.norm(result.normals, axis=1), 1.0, atol=1e-9)

    model = MultiScaleModel([0.01, 0.03], tiny_config, seed=1)
    multi = MultiScaleEstimator(model, k=tiny_config.k, batch_size=8)
    assert not hasattr(multi, "radius")
    report = ev.evaluate_many([("no_noise", cloud)], multi)
    assert sum(report.scale_histogram) == 20
    assert sum(report.scale_histogram_by_category["no_noise"]) == 20
    assert 0.0 <= report.overall_average <= 90.0


def test_patch_level_checks(tiny_config, patch_batch):
    model = SingleScaleModel(tiny_config)
    labels = np.ones(patch_batch.shape[:2])
    assert 0.0 <= ev.patch_plane_accuracy(model, patch_batch, labels) <= 1.0
    angles = ev.patch_angles(model, patch_batch, np.tile([0.0, 0.0, 1.0], (3, 1)))
    assert angles.shape == (3,) and ((angles >= 0) & (angles <= 90)).all()
