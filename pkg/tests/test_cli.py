import json

import numpy as np
import pytest

from stcreg.cli import main
from stcreg.config import load_config
from stcreg.errors import ConfigError


@pytest.fixture()
def tiny_config(tmp_path):
    document = {
        "model": {
            "input_shape": [1, 4, 8, 8],
            "channels_per_stage": [4],
            "strides_per_stage": [[1, 2, 2]],
        },
        "data": {
            "num_clips": 8,
            "shape": [1, 4, 8, 8],
            "seed": 5,
        },
        "train": {
            "epochs": 1,
            "batch_size": 4,
            "crop_size": [4, 8, 8],
            "seed": 1,
        },
        "eval": {"probe_epochs": 50},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(document))
    return path


def test_config_defaults_load():
    cfg = load_config(None)
    assert cfg.train.gamma == 0.1
    assert cfg.train.alpha == 1.0
    assert cfg.model.feature_shape[2] == cfg.model.feature_shape[3]


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"train": {"learning_rte": 0.1}}))
    with pytest.raises(ConfigError, match="learning_rte"):
        load_config(path)
    path.write_text(json.dumps({"trian": {}}))
    with pytest.raises(ConfigError, match="trian"):
        load_config(path)


def test_config_overrides(tiny_config):
    cfg = load_config(tiny_config, ["train.epochs=3", "train.gamma=0.5"])
    assert cfg.train.epochs == 3 and cfg.train.gamma == 0.5
    with pytest.raises(ConfigError):
        load_config(tiny_config, ["nope.epochs=3"])
    with pytest.raises(ConfigError):
        load_config(tiny_config, ["train.epochs"])


def test_cli_usage_errors_exit_1(capsys):
    assert main(["no-such-command"]) == 1
    assert main(["pretrain"]) == 1  # missing required flags
    err = capsys.readouterr().err
    assert "usage" in err or "error" in err


def test_cli_runtime_errors_exit_2(tmp_path, capsys):
    missing = tmp_path / "missing.json"
    code = main(["gen-data", "--config", str(missing), "--out", str(tmp_path / "d")])
    assert code == 2
    assert "error" in capsys.readouterr().err


def test_cli_gen_pretrain_probe_retrieve_viz(tiny_config, tmp_path, capsys):
    data_dir = tmp_path / "train_data"
    test_dir = tmp_path / "test_data"
    assert main(["gen-data", "--config", str(tiny_config), "--out", str(data_dir)]) == 0
    assert (
        main(
            ["gen-data", "--config", str(tiny_config), "--set", "data.seed=6",
             "--out", str(test_dir)]
        )
        == 0
    )

    ckpt = tmp_path / "model.ckpt"
    log = tmp_path / "loss.csv"
    assert (
        main(
            ["pretrain", "--config", str(tiny_config), "--data", str(data_dir / "manifest.tsv"),
             "--out", str(ckpt), "--log", str(log)]
        )
        == 0
    )
    assert ckpt.exists() and log.exists()
    assert len(log.read_text().splitlines()) == 3  # header + 2 steps

    metrics = tmp_path / "probe.csv"
    assert (
        main(
            ["probe", "--config", str(tiny_config), "--checkpoint", str(ckpt),
             "--train-data", str(data_dir / "manifest.tsv"),
             "--test-data", str(test_dir / "manifest.tsv"), "--out", str(metrics)]
        )
        == 0
    )
    lines = metrics.read_text().splitlines()
    assert lines[0] == "metric,value" and lines[1].startswith("probe_accuracy,")

    retrieval = tmp_path / "retrieval.csv"
    assert (
        main(
            ["retrieve", "--config", str(tiny_config), "--checkpoint", str(ckpt),
             "--query-data", str(test_dir / "manifest.tsv"),
             "--gallery-data", str(data_dir / "manifest.tsv"), "--out", str(retrieval)]
        )
        == 0
    )
    assert retrieval.read_text().splitlines()[1].startswith("recall_at_1,")

    matrix_csv = tmp_path / "matrix.csv"
    clip = data_dir / "clip_00000.vclp"
    assert (
        main(
            ["viz-matrix", "--config", str(tiny_config), "--checkpoint", str(ckpt),
             "--clip", str(clip), "--out", str(matrix_csv)]
        )
        == 0
    )
    assert len(matrix_csv.read_text().splitlines()) == 17

    pgm = tmp_path / "map.pgm"
    assert (
        main(
            ["viz-heatmap", "--config", str(tiny_config), "--checkpoint", str(ckpt),
             "--clip", str(clip), "--out", str(pgm)]
        )
        == 0
    )
    assert pgm.read_bytes().startswith(b"P5\n8 8\n255\n")
    capsys.readouterr()


def test_cli_pretrain_zero_epochs(tiny_config, tmp_path, capsys):
    data_dir = tmp_path / "data"
    main(["gen-data", "--config", str(tiny_config), "--out", str(data_dir)])
    ckpt = tmp_path / "init.ckpt"
    log = tmp_path / "init.csv"
    code = main(
        ["pretrain", "--config", str(tiny_config), "--epochs", "0",
         "--data", str(data_dir / "manifest.tsv"), "--out", str(ckpt), "--log", str(log)]
    )
    assert code == 0
    assert ckpt.exists()
    assert log.read_text().splitlines() == [
        "step,epoch,lr,l_tw,l_cw,total,gamma,collapse,variant,lambda,k"
    ]
    capsys.readouterr()


def test_cli_gradcheck(capsys):
    assert main(["gradcheck", "--seed", "7"]) == 0
    out = capsys.readouterr().out
    assert "max relative error" in out
