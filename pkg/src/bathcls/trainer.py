"""Single-trial training, evaluation, prediction and inference timing."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import nn
from .dataset import load_image, make_batches, stack
from .hparams import HyperParams
from .metrics import MetricsReport, evaluate_scores
from .model import ModelConfig, ModelGraph, WeightSnapshot
from .optim import Optimizer

log = logging.getLogger(__name__)

THRESHOLD = 0.5
LOG_HEADER = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]


@dataclass
class TrainSpec:
    hyperparams: HyperParams = field(default_factory=HyperParams)
    epochs_max: int = 50
    batch_size: int = 16
    validation_fraction: float = 0.10
    patience: Optional[int] = 10
    seed: int = 0
    image_size: int = 256

    def __post_init__(self):
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must be in (0, 1)")
        if self.epochs_max < 1:
            raise ValueError("epochs_max must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1 or None")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainReport:
    epochs: list
    best_epoch: Optional[int]
    seconds: float
    diverged: bool = False

    @property
    def best(self) -> Optional[EpochRecord]:
        return None if self.best_epoch is None else self.epochs[self.best_epoch - 1]

    def summary(self) -> dict:
        b = self.best
        return {
            "epochs_run": len(self.epochs),
            "best_epoch": self.best_epoch,
            "best_val_loss": None if b is None else b.val_loss,
            "best_val_acc": None if b is None else b.val_acc,
            "seconds": self.seconds,
            "diverged": self.diverged,
        }


@dataclass(frozen=True)
class Prediction:
    score: float
    label: str


@dataclass(frozen=True)
class InferenceTiming:
    mean_seconds: float
    std_seconds: float
    runs: int


def model_config_for(base: ModelConfig, hp: HyperParams, image_size: int, variant: Optional[str] = None) -> ModelConfig:
    """Architecture ``base`` with the swept settings and image size applied."""
    return replace(
        base,
        variant=variant or base.variant,
        activation=hp.activation,
        use_maxpool=hp.use_maxpool,
        use_batchnorm=hp.use_batchnorm,
        input_size=image_size,
    )


def split_validation(records: list, fraction: float, seed: int = 0) -> tuple[list, list]:
    """Stratified split; each class gives floor(fraction * class size) to validation.

    Both subsets keep the input order.
    """
    if not records:
        raise ValueError("cannot split an empty record list")
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    by_label: dict = {}
    for i, r in enumerate(records):
        by_label.setdefault(r.label, []).append(i)
    rng = np.random.default_rng(seed)
    val_idx = set()
    for label in sorted(by_label, key=str):
        idx = by_label[label]
        n_val = math.floor(fraction * len(idx) + 1e-9)
        if n_val < 1:
            raise ValueError(f"class {label!r} has {len(idx)} records, fewer than 1/fraction; cannot stratify")
        val_idx.update(rng.permutation(idx)[:n_val].tolist())
    train = [r for i, r in enumerate(records) if i not in val_idx]
    val = [r for i, r in enumerate(records) if i in val_idx]
    return train, val


def predict_scores(graph: ModelGraph, samples: list, batch_size: int = 32) -> np.ndarray:
    """Inference-mode scores, one per sample, in input order."""
    out = []
    for batch in make_batches(samples, batch_size, shuffle=False):
        x, _ = stack(batch)
        out.append(graph.forward(x, training=False).reshape(-1))
    return np.concatenate(out) if out else np.zeros(0)


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def write_train_log(report: TrainReport, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(LOG_HEADER)
        for e in report.epochs:
            w.writerow([e.epoch, repr(e.train_loss), repr(e.train_acc), repr(e.val_loss), repr(e.val_acc)])


def train_model(graph: ModelGraph, train: list, validation: list, spec: TrainSpec) -> tuple[TrainReport, WeightSnapshot]:
    """Train ``graph`` in place and leave it holding the best-epoch weights.

    A non-finite loss ends the run with ``diverged`` set instead of raising.
    """
    if not train:
        raise ValueError("empty training set")
    if not validation:
        raise ValueError("empty validation set")
    cfg, hp = graph.config, spec.hyperparams
    if (cfg.activation, cfg.use_maxpool, cfg.use_batchnorm) != (hp.activation, hp.use_maxpool, hp.use_batchnorm):
        raise ValueError("graph architecture does not match the trial hyperparameters")
    if cfg.input_size != spec.image_size:
        raise ValueError(f"graph input size {cfg.input_size} != spec image size {spec.image_size}")

    opt = Optimizer(hp.optimizer, hp.learning_rate)
    trainable = graph.named_parameters(include_state=False)
    records: list[EpochRecord] = []
    best_epoch, best_loss, best_snap = None, math.inf, None
    diverged = False
    start = time.perf_counter()

    for epoch in range(1, spec.epochs_max + 1):
        loss_sum, correct, seen = 0.0, 0, 0
        for batch in make_batches(train, spec.batch_size, seed=_epoch_seed(spec.seed, epoch)):
            x, y = stack(batch)
            with np.errstate(over="ignore", invalid="ignore"):
                p = graph.forward(x, training=True)
                loss, dp = nn.bce_loss(p, y)
            if not math.isfinite(loss) or not np.isfinite(p).all():
                diverged = True
                break
            graph.backward(dp)
            grads = graph.named_gradients()
            if not all(np.isfinite(g).all() for g in grads.values()):
                diverged = True
                break
            opt.step(trainable, grads)
            loss_sum += loss * len(batch)
            correct += int(((p >= THRESHOLD) == (y == 1)).sum())
            seen += len(batch)
        if diverged:
            break

        with np.errstate(over="ignore", invalid="ignore"):
            scores = predict_scores(graph, validation)
        labels = np.array([s.label for s in validation], dtype=np.float64)
        if not np.isfinite(scores).all():
            diverged = True
            break
        val_loss, _ = nn.bce_loss(scores.reshape(-1, 1), labels.reshape(-1, 1))
        val_acc = float(np.mean((scores >= THRESHOLD) == (labels == 1)))
        rec = EpochRecord(epoch, loss_sum / seen, correct / seen, val_loss, val_acc)
        records.append(rec)
        log.debug("epoch %d train_loss=%.4f train_acc=%.3f val_loss=%.4f val_acc=%.3f", *vars(rec).values())

        if val_loss < best_loss:
            best_epoch, best_loss, best_snap = epoch, val_loss, graph.snapshot()
        elif spec.patience is not None and epoch - best_epoch >= spec.patience:
            break

    if diverged:
        log.warning("training diverged after %d completed epochs", len(records))
    if best_snap is None:
        best_snap = graph.snapshot()
    else:
        graph.load_snapshot(best_snap)
    report = TrainReport(records, best_epoch, time.perf_counter() - start, diverged)
    return report, best_snap


def evaluate(graph: ModelGraph, weights: Optional[WeightSnapshot], samples: list, threshold: float = THRESHOLD) -> MetricsReport:
    if not samples:
        raise ValueError("empty test set")
    if weights is not None:
        graph.load_snapshot(weights)
    scores = predict_scores(graph, samples)
    labels = np.array([s.label for s in samples])
    return evaluate_scores(scores, labels, threshold)


def label_for(score: float, threshold: float = THRESHOLD) -> str:
    return "good" if score >= threshold else "bad"


def predict(graph: ModelGraph, weights: Optional[WeightSnapshot], image, threshold: float = THRESHOLD) -> Prediction:
    """Score one image (a path or an [S,S,3] array)."""
    if weights is not None:
        graph.load_snapshot(weights)
    if not isinstance(image, np.ndarray):
        image = load_image(image, graph.config.input_size)
    score = float(graph.forward(image[None], training=False)[0, 0])
    return Prediction(score, label_for(score, threshold))


def time_inference(
    graph: ModelGraph, weights: Optional[WeightSnapshot], image_size: int, warmup: int = 3, runs: int = 10, seed: int = 0
) -> InferenceTiming:
    """Wall-clock seconds per single-image inference pass."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if weights is not None:
        graph.load_snapshot(weights)
    if image_size != graph.config.input_size:
        raise ValueError(f"graph expects {graph.config.input_size}px images, got {image_size}")
    x = np.random.default_rng(seed).random((1, image_size, image_size, graph.config.input_channels), dtype=np.float32)
    for _ in range(warmup):
        graph.forward(x, training=False)
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        graph.forward(x, training=False)
        times.append(time.perf_counter() - t0)
    return InferenceTiming(float(np.mean(times)), float(np.std(times)), runs)
