import argparse

import pytest

import validators
from exceptions import UsageError


def test_radius_lists():
    assert validators.radius_list("0.01, 0.03,0.05") == [0.01, 0.03, 0.05]
    assert validators.radius_list([0.02, 0.04]) == [0.02, 0.04]
    for bad in ("0.05,0.03", "0.01,0.01", "0,0.1", "1.5", "x"):
        with pytest.raises(argparse.ArgumentTypeError):
            validators.radius_list(bad)


def test_scalar_converters():
    assert validators.positive_float("2.5") == 2.5
    assert validators.unit_interval("1") == 1.0
    assert validators.positive_int("3") == 3
    assert validators.non_negative_int("0") == 0
    assert validators.point_count("100") == 100
    for converter, bad in [
        (validators.positive_float, "0"),
        (validators.radius, "2"),
        (validators.unit_interval, "0"),
        (validators.positive_int, "0"),
        (validators.positive_int, "1.5"),
        (validators.non_negative_int, "-1"),
        (validators.point_count, "99"),
        (validators.point_count, "many"),
    ]:
        with pytest.raises(argparse.ArgumentTypeError):
            converter(bad)


def test_file_guards(tmp_path):
    present = tmp_path / "a.xyz"
    present.write_text("0 0 0\n")
    assert validators.require_file(str(present)) == present
    with pytest.raises(UsageError, match="checkpoint not found"):
        validators.require_file(str(tmp_path / "b.npz"), "checkpoint")
    assert validators.require_files(None) == []

    assert validators.require_output(str(tmp_path / "out.ply")).name == "out.ply"
    with pytest.raises(UsageError):
        validators.require_output(str(tmp_path / "missing" / "out.ply"))


def test_checkpoint_count(tmp_path):
    paths = []
    for name in ("a.npz", "b.npz"):
        (tmp_path / name).write_bytes(b"")
        paths.append(str(tmp_path / name))
    assert len(validators.require_checkpoints(paths, 2)) == 2
    with pytest.raises(UsageError):
        validators.require_checkpoints(paths, 3)
    assert validators.require_checkpoints(None, 3) == []
