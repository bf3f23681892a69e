import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from hypothesis.extra import numpy as hnp

from bathcls import metrics
from bathcls.metrics import ConfusionCounts, MetricsReport
from reference_data import BEST_ROW, RESULT_ROWS


@pytest.mark.parametrize("row", RESULT_ROWS, ids=lambda r: f"{r[0]}-{r[1]}-{r[2]}")
def test_published_rates(row):
    acc, prec, rec = row[8:11]
    tp, tn, fp, fn = row[12:]
    r = metrics.rates(ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn))
    assert abs(r["accuracy"] - acc) <= 0.0005
    assert abs(r["precision"] - prec) <= 0.0005
    assert abs(r["recall"] - rec) <= 0.0005


def test_published_marginals():
    for row in RESULT_ROWS:
        tp, tn, fp, fn = row[12:]
        assert tp + fn == 359 and tn + fp == 196


def test_best_row_values():
    tp, tn, fp, fn = BEST_ROW[12:]
    r = metrics.rates(ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn))
    assert round(r["accuracy"], 4) == 0.9243
    assert round(r["precision"], 4) == 0.9295
    assert round(r["recall"], 4) == 0.9554
    assert r["fpr"] == pytest.approx(26 / 196)


def test_confusion_examples():
    assert metrics.confusion([0.7, 0.3], [1, 0]) == ConfusionCounts(tp=1, fp=0, fn=0, tn=1)
    c = metrics.confusion([0.9] * 10, [1, 0] * 5)
    assert (c.tp, c.fp) == (5, 5)
    assert metrics.confusion([0.5], [1]).tp == 1


@pytest.mark.parametrize("seed", range(100))
def test_confusion_matches_recount(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 60))
    s, y = rng.random(n), rng.integers(0, 2, n)
    c = metrics.confusion(s, y)
    recount = {"tp": 0, "fp": 0, "fn": 0, "tn": 0}
    for si, yi in zip(s, y):
        recount[("t" if (si >= 0.5) == (yi == 1) else "f") + ("p" if si >= 0.5 else "n")] += 1
    assert (c.tp, c.fp, c.fn, c.tn) == (recount["tp"], recount["fp"], recount["fn"], recount["tn"])
    assert c.total == n and c.tp + c.fn == y.sum()


def test_confusion_errors():
    with pytest.raises(ValueError):
        metrics.confusion([0.1, 0.2], [1])
    with pytest.raises(ValueError):
        metrics.confusion([], [])


def test_degenerate_rates():
    r = metrics.rates(ConfusionCounts(tp=5, fp=0, fn=0, tn=0))
    assert r == {"accuracy": 1.0, "precision": 1.0, "recall": 1.0, "fpr": None}
    r = metrics.rates(ConfusionCounts(tp=0, fp=0, fn=3, tn=4))
    assert r["precision"] is None and r["recall"] == 0.0 and r["fpr"] == 0.0
    with pytest.raises(ValueError):
        metrics.rates(ConfusionCounts(0, 0, 0, 0))


def test_roc_examples():
    pts = metrics.roc_curve([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    assert (0.0, 1.0) in pts
    assert metrics.roc_curve([0.4] * 6, [1, 0] * 3) == [(0.0, 0.0), (1.0, 1.0)]
    with pytest.raises(ValueError):
        metrics.roc_curve([0.1, 0.2], [1, 1])


def test_auc_examples():
    assert metrics.auc([0.9, 0.4, 0.6, 0.1], [1, 1, 0, 0]) == 0.75
    assert metrics.auc([0.9, 0.8, 0.2], [1, 1, 0]) == 1.0
    assert metrics.auc([0.3] * 5, [1, 0, 1, 0, 0]) == 0.5
    with pytest.raises(ValueError):
        metrics.auc([0.5, 0.6], [0, 0])


def _scores_and_labels(min_size=2, max_size=50):
    n = st.integers(min_size, max_size)
    return n.flatmap(
        lambda k: st.tuples(
            hnp.arrays(np.float64, k, elements=st.sampled_from(np.round(np.linspace(0, 1, 11), 1).tolist()) | st.floats(0, 1)),
            hnp.arrays(np.int64, k, elements=st.integers(0, 1)),
        )
    )


@given(_scores_and_labels())
def test_roc_shape(sl):
    s, y = sl
    assume(0 < y.sum() < len(y))
    pts = metrics.roc_curve(s, y)
    assert pts[0] == (0.0, 0.0) and pts[-1] == (1.0, 1.0)
    f, t = np.array(pts).T
    assert np.all(np.diff(f) >= 0) and np.all(np.diff(t) >= 0)
    assert len(pts) <= len(np.unique(s)) + 2


@given(_scores_and_labels())
def test_auc_equals_pairwise(sl):
    s, y = sl
    assume(0 < y.sum() < len(y))
    assert abs(metrics.auc(s, y) - metrics.pairwise_auc(s, y)) <= 1e-12


@given(_scores_and_labels(), st.sampled_from(["cube", "exp", "affine", "logit"]))
def test_auc_monotone_invariance(sl, transform):
    # Snap to a coarse grid so the transforms stay strictly monotone in floating point.
    s, y = np.round(sl[0], 3), sl[1]
    assume(0 < y.sum() < len(y))
    f = {
        "cube": lambda v: v**3,
        "exp": np.exp,
        "affine": lambda v: 3 * v - 7,
        "logit": lambda v: np.log((v + 1e-3) / (1 + 1e-3 - v)),
    }[transform]
    assert metrics.auc(f(s), y) == pytest.approx(metrics.auc(s, y), abs=1e-12)


@given(st.integers(2, 40), st.integers(0, 2**32 - 1))
def test_label_swap_complements(n, seed):
    rng = np.random.default_rng(seed)
    s = rng.permutation(n) / n  # distinct scores
    y = rng.integers(0, 2, n)
    assume(0 < y.sum() < n)
    assert metrics.auc(s, 1 - y) == pytest.approx(1 - metrics.auc(s, y), abs=1e-12)


def test_evaluate_scores_consistent():
    rng = np.random.default_rng(0)
    s, y = rng.random(40), rng.integers(0, 2, 40)
    rep = metrics.evaluate_scores(s, y)
    r = metrics.rates(rep.counts)
    assert (rep.accuracy, rep.precision, rep.recall, rep.fpr) == (r["accuracy"], r["precision"], r["recall"], r["fpr"])
    expected_loss = -np.mean(y * np.log(np.clip(s, 1e-7, 1 - 1e-7)) + (1 - y) * np.log(np.clip(1 - s, 1e-7, 1 - 1e-7)))
    assert rep.mean_loss == pytest.approx(expected_loss, rel=1e-12)
    assert MetricsReport.from_dict(rep.to_dict()) == rep


def test_evaluate_perfect_and_single_class():
    rep = metrics.evaluate_scores([1.0, 0.0, 1.0], [1, 0, 1])
    assert rep.accuracy == 1.0 and rep.auc == 1.0
    rep = metrics.evaluate_scores([0.2, 0.9], [1, 1])
    assert rep.auc is None and rep.fpr is None
