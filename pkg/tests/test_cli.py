import os

import pytest

from eyeparse.cli import main


def test_no_arguments_is_usage_error(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_option_is_usage_error():
    assert main(["synth", "--bogus"]) == 1


def test_synth_same_seed_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["synth", "--seed", "7", "--scenes", "2", "--out", str(tmp_path / d)]) == 0
    names = sorted(os.listdir(tmp_path / "a"))
    assert names == sorted(os.listdir(tmp_path / "b")) and "room_000.txt" in names
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_parse_without_models_is_data_error(tmp_path, capsys):
    assert main(["synth", "--scenes", "1", "--out", str(tmp_path / "s")]) == 0
    code = main(["parse", str(tmp_path / "s"), "--models", str(tmp_path / "nope")])
    assert code == 2
    assert "train-cnn" in capsys.readouterr().err


def test_bad_config_is_data_error(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("mis = lots\n")
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_voxelize_and_eval(tmp_path, capsys):
    assert main(["synth", "--scenes", "1", "--out", str(tmp_path)]) == 0
    scene = str(tmp_path / "room_000.txt")
    assert main(["voxelize", scene, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "room_000.grid").exists()
    # a scene file scored against itself is perfect
    assert main(["eval", scene, scene]) == 0
    out = capsys.readouterr().out
    assert "accuracy" in out and "100.00" in out


@pytest.mark.parametrize("argv", [["train-cnn"], ["heatmap", "x.txt", "--models", "m"]])
def test_missing_required_arguments(argv):
    assert main(argv) == 1
