import json

import pytest
import yaml
from PIL import Image

from bathcls import cli
from bathcls.config import ConfigError, load_config, parse_config
from helpers import write_placeholder_manifest
from reference_data import DATASET_COUNTS

TINY = {
    "seed": 2,
    "model": {"variant": "decusr_l", "feb_filters": [4, 4, 4, 4], "rb_count": 2, "rb_filters": 4, "rb_depth": 1},
    "hyperparams": {"optimizer": "rmsprop", "activation": "elu", "learning_rate": 0.001,
                    "use_maxpool": True, "use_batchnorm": False},
    "train": {"epochs_max": 2, "image_size": 16},
    "data": {"source": "synthetic", "n_train": 20, "n_test": 8},
    "paths": {"output_dir": "out"},
    "sweep": {"optimizers": ["rmsprop"], "activations": ["elu"], "learning_rates": ["1e-3"],
              "use_maxpool": [True], "use_batchnorm": [True, False], "phase1_epochs": 1,
              "phase1_image_size": 8, "phase2_epochs": 1, "phase2_sizes": [8, 16]},
}


def _cfg(tmp_path, name="c.yaml", **overrides):
    doc = {**TINY, **overrides}
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return p


def test_unknown_command(capsys):
    assert cli.dispatch(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err


def test_dataset_stats(tmp_path, capsys):
    m = write_placeholder_manifest(tmp_path / "m.csv", {("good", "train"): 3, ("bad", "train"): 2, ("good", "test"): 1, ("bad", "test"): 0})
    assert cli.dispatch(["dataset-stats", str(m)]) == 0
    out = capsys.readouterr().out.split("\n")
    assert out[1].split() == ["Train", "3", "2", "5"]
    assert out[3].split() == ["Total", "4", "2", "6"]


def test_dataset_stats_errors(tmp_path):
    assert cli.dispatch(["dataset-stats", str(tmp_path / "missing.csv")]) == 2
    (tmp_path / "bad.csv").write_text("path,label,split\na,meh,train\n")
    assert cli.dispatch(["dataset-stats", str(tmp_path / "bad.csv")]) == 2


def test_gradcheck_command(capsys):
    assert cli.dispatch(["gradcheck", "--seeds", "1", "--skip-model"]) == 0
    assert "all checks passed" in capsys.readouterr().out


def test_train_eval_predict_bench(tmp_path, capsys):
    cfg = _cfg(tmp_path)
    assert cli.dispatch(["--threads", "1", "train", str(cfg)]) == 0
    out = tmp_path / "out"
    assert (out / "weights.bwt").exists() and (out / "train_log.csv").exists()
    assert capsys.readouterr().out == ""

    assert cli.dispatch(["eval", str(cfg), "--weights", str(out / "weights.bwt")]) == 0
    report = json.loads((out / "eval.json").read_text())
    assert report["counts"]["tp"] + report["counts"]["fn"] == 4

    Image.new("RGB", (20, 20), (240, 240, 240)).save(tmp_path / "x.png")
    capsys.readouterr()
    assert cli.dispatch(["predict", str(cfg), "--weights", str(out / "weights.bwt"), str(tmp_path / "x.png")]) == 0
    line = capsys.readouterr().out.strip()
    score, label = line.split()
    assert score.startswith("score=") and 0 < float(score[6:]) < 1
    assert label in ("label=good", "label=bad")

    (tmp_path / "junk.png").write_bytes(b"junk")
    assert cli.dispatch(["predict", str(cfg), "--weights", str(out / "weights.bwt"), str(tmp_path / "junk.png")]) == 1

    assert cli.dispatch(["bench", str(cfg), "--weights", str(out / "weights.bwt"), "--runs", "2", "--warmup", "0"]) == 0
    text = capsys.readouterr().out
    assert "5.49e-05" in text and "4.79e-05" in text and "params(decusr_l) < params(decusr): yes" in text
    assert json.loads((out / "bench.json").read_text())["fewer_params"] is True


def test_weights_mismatch_is_config_error(tmp_path):
    cfg = _cfg(tmp_path)
    assert cli.dispatch(["train", str(cfg)]) == 0
    other = _cfg(tmp_path, "o.yaml", model={**TINY["model"], "rb_filters": 3})
    assert cli.dispatch(["eval", str(other), "--weights", str(tmp_path / "out" / "weights.bwt")]) == 2
    assert cli.dispatch(["eval", str(cfg), "--weights", str(tmp_path / "nope.bwt")]) == 2


def test_train_twice_identical(tmp_path):
    a = _cfg(tmp_path, "a.yaml", paths={"output_dir": "a"})
    b = _cfg(tmp_path, "b.yaml", paths={"output_dir": "b"})
    assert cli.dispatch(["--threads", "1", "train", str(a)]) == 0
    assert cli.dispatch(["--threads", "1", "train", str(b)]) == 0
    for f in ("train_log.csv", "weights.bwt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_sweep_commands(tmp_path):
    cfg = _cfg(tmp_path)
    assert cli.dispatch(["sweep", "phase1", str(cfg)]) == 0
    out = tmp_path / "out"
    p1 = json.loads((out / "phase1.json").read_text())
    assert len(p1["trials"]) == 4 and len(p1["selected"]) == 4
    assert cli.dispatch(["sweep", "phase2", str(cfg), "--phase1", str(out / "phase1.json")]) == 0
    lines = (out / "results.csv").read_text().splitlines()
    assert lines[0].startswith("model,optimizer,activation") and len(lines) == 1 + 8
    assert cli.dispatch(["sweep", "phase2", str(cfg), "--phase1", str(tmp_path / "none.json")]) == 2
    assert cli.dispatch(["sweep", "phase3", str(cfg)]) == 2


def test_threads_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("BATHCLS_THREADS", "zero")
    assert cli.dispatch(["train", str(_cfg(tmp_path))]) == 2
    monkeypatch.setenv("BATHCLS_THREADS", "1")
    assert cli.dispatch(["train", str(_cfg(tmp_path))]) == 0


def test_manifest_paths_checked_first(tmp_path):
    cfg = _cfg(tmp_path, data={"source": "manifest"}, paths={"manifest": "m.csv", "image_root": "imgs"})
    assert cli.dispatch(["train", str(cfg)]) == 2
    assert not (tmp_path / "out").exists()


def test_config_strictness(tmp_path):
    base = dict(TINY)
    assert parse_config(base).hyperparams.learning_rate == 1e-3
    assert parse_config(base).sweep.learning_rates == [1e-3]
    for bad in (
        {**base, "extra": 1},
        {**base, "model": {**base["model"], "depth": 3}},
        {**base, "hyperparams": {**base["hyperparams"], "optimizer": "lbfgs"}},
        {**base, "train": {"epochs_max": 0}},
        {**base, "train": {"validation_fraction": 1.5}},
        {**base, "data": {"source": "ftp"}},
        {**base, "data": {"source": "synthetic", "n_train": 7}},
        {**base, "sweep": {"activations": ["elu", "elu"]}},
        {**base, "sweep": {"use_maxpool": [1]}},
        {**base, "model": {**base["model"], "kernel_size": 2}},
        [1, 2],
    ):
        with pytest.raises(ConfigError):
            parse_config(bad)
    (tmp_path / "bad.yaml").write_text("seed: [unclosed")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")


def test_config_defaults_and_relative_paths(tmp_path):
    cfg = parse_config({}, tmp_path)
    assert cfg.train.epochs_max == 50 and cfg.train.batch_size == 16 and cfg.train.patience == 10
    assert cfg.model_config().variant == "decusr_l"
    assert cfg.output_dir == tmp_path / "out"
