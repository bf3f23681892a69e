"""Two-phase hyperparameter sweep and its results table.

Phase 1 trains every grid point for both variants at the reference size and
scores each on the validation split. The best two per variant go to phase 2,
which retrains them from scratch at each image size and scores on the test
split.
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .hparams import ACTIVATIONS, FLAGS, LEARNING_RATES, HyperParams
from .metrics import MetricsReport
from .model import VARIANTS, ModelConfig, build_model
from .optim import OPTIMIZERS
from .trainer import TrainSpec, evaluate, model_config_for, split_validation, train_model, write_train_log

log = logging.getLogger(__name__)

RESULTS_HEADER = [
    "model", "optimizer", "activation", "learning_rate", "max_pooling", "batch_normalization",
    "image_size", "loss", "accuracy", "precision", "recall", "auc", "tp", "tn", "fp", "fn",
]
PHASE2_SIZES = (128, 256, 512, 1024)


@dataclass
class TrialResult:
    variant: str
    hyperparams: HyperParams
    image_size: int
    status: str
    metrics: Optional[MetricsReport]
    train: dict
    seed: int

    def __post_init__(self):
        if self.status not in ("ok", "diverged"):
            raise ValueError(f"unknown trial status {self.status!r}")
        if self.status == "ok" and self.metrics is None:
            raise ValueError("an ok trial needs a metrics report")

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "hyperparams": self.hyperparams.to_dict(),
            "image_size": self.image_size,
            "status": self.status,
            "metrics": None if self.metrics is None else self.metrics.to_dict(),
            "train": dict(self.train),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrialResult":
        return cls(
            d["variant"],
            HyperParams(**d["hyperparams"]),
            d["image_size"],
            d["status"],
            None if d["metrics"] is None else MetricsReport.from_dict(d["metrics"]),
            d["train"],
            d["seed"],
        )


@dataclass
class PhaseReport:
    phase: int
    trials: list
    selected: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "phase": self.phase,
            "trials": [t.to_dict() for t in self.trials],
            "selected": [{"variant": v, "hyperparams": hp.to_dict()} for v, hp in self.selected],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhaseReport":
        return cls(
            d["phase"],
            [TrialResult.from_dict(t) for t in d["trials"]],
            [(s["variant"], HyperParams(**s["hyperparams"])) for s in d["selected"]],
        )

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)

    @classmethod
    def load(cls, path) -> "PhaseReport":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def enumerate_grid(
    optimizers=OPTIMIZERS,
    activations=ACTIVATIONS,
    learning_rates=LEARNING_RATES,
    maxpool=FLAGS,
    batchnorm=FLAGS,
) -> list[HyperParams]:
    """Cartesian product in lexicographic order of the listed value orders."""
    return [HyperParams(*combo) for combo in itertools.product(optimizers, activations, learning_rates, maxpool, batchnorm)]


def trial_seed(master: int, phase: int, variant: str, config_index: int, image_size: int) -> int:
    """Per-trial seed that depends only on the trial's identity, not run order."""
    entropy = [master, phase, VARIANTS.index(variant), config_index, image_size]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def _run_trial(variant, hp, base, size, train, val, eval_samples, spec_kwargs, seed, log_path=None) -> TrialResult:
    config = model_config_for(base, hp, size, variant)
    graph = build_model(config, seed=seed)
    spec = TrainSpec(hyperparams=hp, image_size=size, seed=seed, **spec_kwargs)
    report, weights = train_model(graph, train, val, spec)
    if log_path is not None:
        write_train_log(report, log_path)
    if report.diverged or report.best_epoch is None:
        log.warning("trial %s %s @%d diverged", variant, hp.label(), size)
        return TrialResult(variant, hp, size, "diverged", None, report.summary(), seed)
    metrics = evaluate(graph, weights, eval_samples)
    log.info("trial %s %s @%d acc=%.3f", variant, hp.label(), size, metrics.accuracy)
    return TrialResult(variant, hp, size, "ok", metrics, report.summary(), seed)


def _map(fn, jobs, workers: int):
    if workers <= 1:
        return [fn(*j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(lambda j: fn(*j), jobs))


def _log_path(log_dir, phase, variant, index, size):
    if log_dir is None:
        return None
    return log_dir / f"phase{phase}_{variant}_{index:03d}_{size}.csv"


def run_phase1(
    source,
    base_config: ModelConfig = ModelConfig(),
    grid: Optional[list] = None,
    variants=VARIANTS,
    epochs_max: int = 50,
    image_size: int = 256,
    seed: int = 0,
    batch_size: int = 16,
    patience: Optional[int] = 10,
    validation_fraction: float = 0.10,
    per_model: int = 2,
    workers: int = 1,
    log_dir=None,
) -> PhaseReport:
    grid = enumerate_grid() if grid is None else grid
    records = source.records("train")
    if not records:
        raise ValueError("no trainable data")
    train_recs, val_recs = split_validation(records, validation_fraction, seed)
    train, val = source.load(train_recs, image_size), source.load(val_recs, image_size)
    spec_kwargs = dict(epochs_max=epochs_max, batch_size=batch_size, patience=patience, validation_fraction=validation_fraction)
    jobs = [
        (v, hp, base_config, image_size, train, val, val, spec_kwargs,
         trial_seed(seed, 1, v, i, image_size), _log_path(log_dir, 1, v, i, image_size))
        for v in variants
        for i, hp in enumerate(grid)
    ]
    report = PhaseReport(1, _map(_run_trial, jobs, workers))
    try:
        report.selected = select_top(report, per_model)
    except ValueError as e:
        log.warning("no phase-2 selection: %s", e)
    return report


def _rank_key(t: TrialResult):
    if t.status != "ok":
        return (1, 0.0, 0.0, 0.0)
    m = t.metrics
    auc = -1.0 if m.auc is None else m.auc
    return (0, -m.accuracy, -auc, m.mean_loss)


def select_top(report: PhaseReport, per_model: int = 2) -> list:
    """Best ``per_model`` trials per variant by accuracy, then AUC, then loss."""
    chosen = []
    variants = list(dict.fromkeys(t.variant for t in report.trials))
    for v in variants:
        trials = [t for t in report.trials if t.variant == v]
        ok = [t for t in trials if t.status == "ok"]
        if len(ok) < per_model:
            raise ValueError(f"variant {v} has {len(ok)} ok trials, need {per_model}")
        # sorted() is stable, so grid order breaks any remaining ties.
        chosen += [(v, t.hyperparams) for t in sorted(ok, key=_rank_key)[:per_model]]
    return chosen


def run_phase2(
    selected: list,
    source,
    base_config: ModelConfig = ModelConfig(),
    sizes=PHASE2_SIZES,
    epochs_max: int = 500,
    seed: int = 0,
    batch_size: int = 16,
    patience: Optional[int] = 10,
    validation_fraction: float = 0.10,
    workers: int = 1,
    log_dir=None,
) -> PhaseReport:
    if not selected:
        raise ValueError("no selected configurations")
    test_recs = source.records("test")
    if not test_recs:
        raise ValueError("missing test split")
    train_recs, val_recs = split_validation(source.records("train"), validation_fraction, seed)
    spec_kwargs = dict(epochs_max=epochs_max, batch_size=batch_size, patience=patience, validation_fraction=validation_fraction)
    jobs = []
    for size in sizes:
        train, val, test = (source.load(r, size) for r in (train_recs, val_recs, test_recs))
        for i, (v, hp) in enumerate(selected):
            jobs.append((v, hp, base_config, size, train, val, test, spec_kwargs,
                         trial_seed(seed, 2, v, i, size), _log_path(log_dir, 2, v, i, size)))
    return PhaseReport(2, _map(_run_trial, jobs, workers), list(selected))


def _fmt(x: Optional[float]) -> str:
    return "" if x is None else f"{x:.3f}"


def result_row(t: TrialResult) -> list:
    hp, m = t.hyperparams, t.metrics
    row = [
        t.variant, hp.optimizer, hp.activation, f"{hp.learning_rate:g}",
        "yes" if hp.use_maxpool else "no", "yes" if hp.use_batchnorm else "no", str(t.image_size),
    ]
    if m is None:
        return row + [""] * 9
    c = m.counts
    return row + [_fmt(m.mean_loss), _fmt(m.accuracy), _fmt(m.precision), _fmt(m.recall), _fmt(m.auc),
                  str(c.tp), str(c.tn), str(c.fp), str(c.fn)]


def emit_results_table(report: PhaseReport, path) -> None:
    """One CSV row per trial, grouped by image size in first-seen order."""
    sizes = list(dict.fromkeys(t.image_size for t in report.trials))
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        for size in sizes:
            for t in report.trials:
                if t.image_size == size:
                    w.writerow(result_row(t))


def read_results_table(path) -> list[dict]:
    """Parse a results CSV back into typed rows (None for empty cells)."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != RESULTS_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = []
        for raw in reader:
            d = dict(zip(header, raw))
            out = {
                "model": d["model"],
                "optimizer": d["optimizer"],
                "activation": d["activation"],
                "learning_rate": float(d["learning_rate"]),
                "max_pooling": d["max_pooling"] == "yes",
                "batch_normalization": d["batch_normalization"] == "yes",
                "image_size": int(d["image_size"]),
            }
            for k in ("loss", "accuracy", "precision", "recall", "auc"):
                out[k] = float(d[k]) if d[k] else None
            for k in ("tp", "tn", "fp", "fn"):
                out[k] = int(d[k]) if d[k] else None
            rows.append(out)
        return rows
