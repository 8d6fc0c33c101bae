import numpy as np
import pytest

from main import apply_config_defaults, build_parser, run
from models import networks
from services import pointcloud_service

TINY_NETWORK = "point_widths=8,16\nqstn_point_widths=8\nqstn_head_widths=8\nnormal_head_widths=8\nplane_head_widths=8\nscale_hidden=4\n"


@pytest.fixture
def plane_xyz(tmp_path):
    path = tmp_path / "plane.xyz"
    assert run(["gen", "--shape", "plane", "--n", "800", "--eval-points", "40", "--out", str(path)]) == 0
    return path


@pytest.fixture
def tiny_env(tmp_path):
    path = tmp_path / "tiny.env"
    path.write_text(TINY_NETWORK)
    return path


def train_args(checkpoint, tiny_env, *extra):
    return [
        "--synthetic", "plane,sphere", "--synthetic-noise", "0", "--n", "400", "--k", "16",
        "--patches-per-shape", "6", "--epochs", "2", "--lr", "1e-3", "--profile", "reduced",
        "--config", str(tiny_env), "--checkpoint", str(checkpoint), *extra,
    ]


def test_gen_writes_cloud_and_sidecars(capsys, plane_xyz):
    printed = capsys.readouterr().out.split()
    assert [p.rsplit(".", 1)[1] for p in printed] == ["xyz", "normals", "pidx"]
    cloud = pointcloud_service.load_cloud(plane_xyz)
    assert cloud.n_points == 800 and len(cloud.eval_indices) == 40


def test_eval_pca_on_plane(plane_xyz, tmp_path, capsys):
    csv_path = tmp_path / "report.csv"
    code = run(["eval", "--estimator", "pca", "--radius", "0.05", "--input", str(plane_xyz), "--csv", str(csv_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert out.startswith("RMSE angle error (degrees)")
    assert "pca" in out
    overall = [line for line in csv_path.read_text().splitlines() if ",overall," in line][0]
    assert float(overall.split(",")[3]) < 1e-6


def test_eval_ground_truth_writes_text_report(plane_xyz, tmp_path):
    report = tmp_path / "report.txt"
    assert run(["eval", "--estimator", "gt", "--input", str(plane_xyz), "--out", str(report)]) == 0
    assert "0.00" in report.read_text()


def test_labels_on_dihedral_split_the_faces(tmp_path, capsys):
    cloud = tmp_path / "dihedral.xyz"
    assert run(["gen", "--shape", "dihedral", "--angle", "90", "--n", "4000", "--out", str(cloud)]) == 0
    capsys.readouterr()

    ply = tmp_path / "labels.ply"
    assert run(["labels", "--input", str(cloud), "--radius", "0.05", "--theta", "0.5", "--out", str(ply)]) == 0
    summary = dict(item.split("=") for item in capsys.readouterr().out.split())
    assert int(summary["plane"]) > 0 and int(summary["error"]) > 0
    _, colors = pointcloud_service.read_ply(ply)
    assert len(np.unique(colors, axis=0)) == 2


def test_heatmap_export(plane_xyz, tmp_path, capsys):
    ply = tmp_path / "heat.ply"
    assert run(["export-heatmap", "--input", str(plane_xyz), "--estimator", "pca", "--out", str(ply)]) == 0
    assert "excluded=0" in capsys.readouterr().out
    points, colors = pointcloud_service.read_ply(ply)
    assert len(points) == 800
    np.testing.assert_array_equal(colors, np.tile([0, 0, 255], (800, 1)))


def test_usage_errors_exit_two(tmp_path, capsys):
    assert run(["frobnicate"]) == 2
    assert run(["gen", "--shape", "plane", "--n", "50", "--out", str(tmp_path / "few.xyz")]) == 2
    assert not (tmp_path / "few.xyz").exists()
    assert run(["eval", "--radius", "2", "--input", "x.xyz"]) == 2
    capsys.readouterr()

    assert run(["eval", "--input", str(tmp_path / "missing.xyz")]) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert err[-1].startswith("error code=2 type=UsageError detail=")


def test_runtime_failure_is_one_line(tmp_path, capsys):
    bad = tmp_path / "bad.xyz"
    bad.write_text("0 0 0\n1 2\n")
    assert run(["eval", "--input", str(bad), "--log-level", "ERROR"]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    assert err[0].startswith("error code=1 type=ParseError detail=")
    assert "bad.xyz:2" in err[0]


def test_help_exits_zero(capsys):
    assert run(["train-multi", "--help"]) == 0
    text = capsys.readouterr().out
    for flag in ("--radii", "--preset", "--batch", "--lr", "--momentum", "--freeze-subnets"):
        assert flag in text
    assert "0.01, 0.03, 0.05" in text


def test_config_file_sits_between_flags_and_defaults(tmp_path):
    parser = build_parser()
    apply_config_defaults(parser, {"radius": "0.02", "epochs": "7", "freeze_subnets": "yes", "plane_loss": "no"})

    args = parser.parse_args(["train-single", "--checkpoint", "m.npz"])
    assert args.radius == 0.02 and args.epochs == 7
    args = parser.parse_args(["train-single", "--checkpoint", "m.npz", "--radius", "0.04"])
    assert args.radius == 0.04
    args = parser.parse_args(["train-multi", "--checkpoint", "m.npz"])
    assert args.freeze_subnets is True
    assert args.plane_loss is False

    untouched = build_parser().parse_args(["train-single", "--checkpoint", "m.npz"])
    assert untouched.epochs == 20
    assert untouched.plane_loss is True


def test_invalid_config_value_is_a_usage_error(tmp_path, tiny_env, capsys):
    config = tmp_path / "bad.env"
    config.write_text("radius=abc\n")
    assert run(["eval", "--config", str(config), "--input", "x.xyz"]) == 2
    assert run(["eval", "--config", str(tmp_path / "nope.env")]) == 2


def test_train_evaluate_and_export(tmp_path, tiny_env, plane_xyz, capsys):
    single = tmp_path / "single.npz"
    history = tmp_path / "history.csv"
    assert run(["train-single", "--radius", "0.05", "--batch", "4", "--history", str(history),
                *train_args(single, tiny_env)]) == 0
    epochs = [line for line in capsys.readouterr().out.splitlines() if line.startswith("epoch=")]
    assert len(epochs) == 2
    assert history.read_text().splitlines()[0] == "epoch,L_normal,L_main,L_total"
    model, metadata = networks.load_model(str(single))
    assert metadata["radius"] == 0.05 and model.config.point_widths == [8, 16] and model.config.k == 16

    assert run(["eval", "--estimator", "single", "--checkpoint", str(single), "--input", str(plane_xyz)]) == 0

    multi = tmp_path / "multi.npz"
    assert run(["train-multi", "--radii", "0.03,0.05", "--batch", "4", "--init", str(single), str(single),
                "--freeze-subnets", *train_args(multi, tiny_env)]) == 0
    assert networks.load_model(str(multi))[1]["radii"] == [0.03, 0.05]
    capsys.readouterr()

    assert run(["eval", "--estimator", "multi", "--checkpoint", str(multi), "--input", str(plane_xyz)]) == 0
    assert "Scale selection" in capsys.readouterr().out
    assert run(["eval", "--estimator", "single", "--checkpoint", str(multi), "--input", str(plane_xyz)]) == 2

    ply = tmp_path / "predicted.ply"
    assert run(["export-labels", "--input", str(plane_xyz), "--checkpoint", str(multi), "--out", str(ply)]) == 0
    assert ply.read_text().startswith("ply")


def test_freeze_needs_pretrained_subnets(tmp_path, tiny_env):
    assert run(["train-multi", "--freeze-subnets", *train_args(tmp_path / "m.npz", tiny_env)]) == 2


def test_benchmark_and_baseline_sweep(tmp_path, capsys):
    bench = tmp_path / "bench"
    assert run(["gen", "--benchmark", "--shapes", "plane", "--n", "600", "--eval-points", "30",
                "--out", str(bench)]) == 0
    assert sorted(p.name for p in bench.iterdir()) == sorted(
        ["no_noise", "small_noise", "middle_noise", "large_noise", "gradient", "stripes"]
    )
    capsys.readouterr()

    assert run(["baseline-sweep", "--benchmark", str(bench), "--radii", "0.05,0.1", "--estimators", "pca"]) == 0
    out = capsys.readouterr().out
    assert "pca@0.05" in out and "pca@0.1" in out
    assert "best pca radius=" in out
    assert run(["baseline-sweep", "--benchmark", str(bench), "--estimators", "svd"]) == 2


def test_train_without_plane_loss(tmp_path, tiny_env, capsys):
    checkpoint = tmp_path / "normal_only.npz"
    assert run(["train-single", "--radius", "0.05", "--batch", "4", "--no-plane-loss",
                *train_args(checkpoint, tiny_env)]) == 0
    epochs = [line for line in capsys.readouterr().out.splitlines() if line.startswith("epoch=")]
    assert all("L_main=0.000000" in line for line in epochs)
    assert networks.load_model(str(checkpoint))[1]["plane_loss"] is False
