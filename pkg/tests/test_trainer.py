import csv
from dataclasses import replace

import numpy as np
import pytest
from PIL import Image

from bathcls import nn, trainer
from bathcls.dataset import Record, Sample, SyntheticSource, load_image
from bathcls.hparams import HyperParams
from bathcls.model import ModelConfig, build_model

HP = HyperParams("rmsprop", "elu", 1e-3, True, False)
SIZE = 16


def _setup(n_train=40, seed=0, hp=HP):
    src = SyntheticSource(n_train, 8, seed=seed)
    tr, va = trainer.split_validation(src.records("train"), 0.1, seed)
    graph = build_model(trainer.model_config_for(ModelConfig(), hp, SIZE), seed=seed)
    return graph, src.load(tr, SIZE), src.load(va, SIZE), src


def test_split_hotelbath_sizes():
    recs = [Record(f"g{i}", "good", "train") for i in range(6822)] + [Record(f"b{i}", "bad", "train") for i in range(3739)]
    tr, va = trainer.split_validation(recs, 0.10, seed=0)
    assert len(va) == 682 + 373
    assert sum(r.label == "good" for r in va) == 682
    assert len(tr) + len(va) == len(recs)
    assert not {r.path for r in tr} & {r.path for r in va}


def test_split_small_and_deterministic():
    recs = [Record(f"g{i}", "good", "train") for i in range(10)]
    tr, va = trainer.split_validation(recs, 0.10, seed=5)
    assert len(va) == 1
    assert trainer.split_validation(recs, 0.10, seed=5) == (tr, va)


def test_split_errors():
    recs = [Record(f"g{i}", "good", "train") for i in range(20)] + [Record(f"b{i}", "bad", "train") for i in range(9)]
    with pytest.raises(ValueError, match="cannot stratify"):
        trainer.split_validation(recs, 0.10)
    with pytest.raises(ValueError):
        trainer.split_validation([], 0.1)
    with pytest.raises(ValueError):
        trainer.split_validation(recs, 1.0)


@pytest.mark.parametrize("kwargs", [dict(validation_fraction=0.0), dict(epochs_max=0), dict(batch_size=0), dict(patience=0)])
def test_train_spec_validation(kwargs):
    with pytest.raises(ValueError):
        trainer.TrainSpec(**kwargs)


def test_one_epoch_bound():
    g, tr, va, _ = _setup()
    rep, _ = trainer.train_model(g, tr, va, trainer.TrainSpec(HP, epochs_max=1, image_size=SIZE))
    assert len(rep.epochs) == 1 and rep.best_epoch == 1


def test_no_patience_runs_all_epochs_and_best_is_min():
    g, tr, va, _ = _setup()
    rep, snap = trainer.train_model(g, tr, va, trainer.TrainSpec(HP, epochs_max=6, patience=None, image_size=SIZE))
    assert len(rep.epochs) == 6
    losses = [e.val_loss for e in rep.epochs]
    assert rep.best.val_loss == min(losses)
    # The graph ends up holding the best-epoch weights.
    scores = trainer.predict_scores(g, va)
    labels = np.array([s.label for s in va], dtype=float)
    assert nn.bce_loss(scores.reshape(-1, 1), labels.reshape(-1, 1))[0] == pytest.approx(rep.best.val_loss, rel=1e-6)
    assert snap.fingerprint == g.config.fingerprint()


def test_early_stopping_bound():
    g, tr, va, _ = _setup()
    rep, _ = trainer.train_model(g, tr, va, trainer.TrainSpec(HP, epochs_max=200, patience=2, image_size=SIZE))
    assert len(rep.epochs) <= rep.best_epoch + 2


def test_training_is_deterministic(tmp_path):
    logs = []
    for i in range(2):
        g, tr, va, _ = _setup(seed=1)
        rep, snap = trainer.train_model(g, tr, va, trainer.TrainSpec(HP, epochs_max=3, seed=1, image_size=SIZE))
        trainer.write_train_log(rep, tmp_path / f"log{i}.csv")
        logs.append(((tmp_path / f"log{i}.csv").read_bytes(), {k: v.tobytes() for k, v in snap.tensors.items()}))
    assert logs[0] == logs[1]
    with open(tmp_path / "log0.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]
    assert len(rows) == 4


def test_divergence_is_reported_not_raised():
    g, tr, va, _ = _setup()
    bad = [Sample(np.full_like(s.image, np.inf), s.label) for s in tr]
    rep, _ = trainer.train_model(g, bad, va, trainer.TrainSpec(HP, epochs_max=3, image_size=SIZE))
    assert rep.diverged and rep.best_epoch is None and rep.epochs == []


def test_train_rejects_bad_inputs():
    g, tr, va, _ = _setup()
    with pytest.raises(ValueError):
        trainer.train_model(g, [], va, trainer.TrainSpec(HP, image_size=SIZE))
    with pytest.raises(ValueError):
        trainer.train_model(g, tr, va, trainer.TrainSpec(replace(HP, activation="tanh"), image_size=SIZE))
    with pytest.raises(ValueError):
        trainer.train_model(g, tr, va, trainer.TrainSpec(HP, image_size=32))


def test_evaluate_idempotent_and_marginals():
    g, tr, va, src = _setup()
    _, snap = trainer.train_model(g, tr, va, trainer.TrainSpec(HP, epochs_max=2, image_size=SIZE))
    test = src.load(src.records("test"), SIZE)
    a = trainer.evaluate(g, snap, test)
    b = trainer.evaluate(g, snap, test)
    assert a == b
    n_pos = sum(s.label for s in test)
    assert a.counts.tp + a.counts.fn == n_pos and a.counts.tn + a.counts.fp == len(test) - n_pos
    with pytest.raises(ValueError):
        trainer.evaluate(g, snap, [])


@pytest.mark.parametrize("score,label", [(0.7, "good"), (0.49, "bad"), (0.5, "good")])
def test_label_threshold(score, label):
    assert trainer.label_for(score) == label


def test_predict_path_and_array(tmp_path):
    g, *_ = _setup()
    Image.new("RGB", (40, 30), (230, 230, 230)).save(tmp_path / "x.png")
    p = trainer.predict(g, None, tmp_path / "x.png")
    assert 0 < p.score < 1 and p.label == trainer.label_for(p.score)
    assert trainer.predict(g, None, load_image(tmp_path / "x.png", SIZE)).score == p.score


def test_time_inference():
    g, *_ = _setup()
    t = trainer.time_inference(g, None, SIZE, warmup=1, runs=10)
    assert t.runs == 10 and t.mean_seconds > 0 and t.std_seconds >= 0
    with pytest.raises(ValueError):
        trainer.time_inference(g, None, SIZE, runs=0)
