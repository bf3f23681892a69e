"""Two-phase sweep at desk scale on the synthetic dataset.

Runs phase 1 over a restricted grid, keeps the top two per variant and
retrains them at a couple of small image sizes. Writes phase1.json,
phase2.json and results.csv to --out.

    python scripts/mini_sweep.py --out runs/mini
"""
from __future__ import annotations

import argparse
import logging
from dataclasses import dataclass, field
from pathlib import Path

from threadpoolctl import threadpool_limits

from bathcls.dataset import SyntheticSource
from bathcls.model import ModelConfig
from bathcls.sweep import emit_results_table, enumerate_grid, run_phase1, run_phase2


@dataclass
class MiniSweep:
    out: Path = Path("runs/mini")
    optimizers: tuple = ("rmsprop", "adam")
    activations: tuple = ("elu", "relu")
    learning_rates: tuple = (1e-3,)
    n_train: int = 40
    n_test: int = 16
    phase1_size: int = 16
    phase1_epochs: int = 5
    phase2_sizes: tuple = (16, 32)
    phase2_epochs: int = 10
    seed: int = 0
    base: ModelConfig = field(default_factory=lambda: ModelConfig(feb_filters=(8, 4, 4, 4), rb_count=2, rb_filters=4))


def run(cfg: MiniSweep):
    cfg.out.mkdir(parents=True, exist_ok=True)
    src = SyntheticSource(cfg.n_train, cfg.n_test, cfg.seed)
    grid = enumerate_grid(cfg.optimizers, cfg.activations, cfg.learning_rates)
    p1 = run_phase1(src, cfg.base, grid, epochs_max=cfg.phase1_epochs, image_size=cfg.phase1_size, seed=cfg.seed)
    p1.save(cfg.out / "phase1.json")
    emit_results_table(p1, cfg.out / "phase1.csv")
    p2 = run_phase2(p1.selected, src, cfg.base, sizes=cfg.phase2_sizes, epochs_max=cfg.phase2_epochs, seed=cfg.seed)
    p2.save(cfg.out / "phase2.json")
    emit_results_table(p2, cfg.out / "results.csv")
    return p1, p2


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=Path("runs/mini"))
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    with threadpool_limits(1):
        _, p2 = run(MiniSweep(out=a.out, seed=a.seed))
    for t in p2.trials:
        acc = "diverged" if t.metrics is None else f"{t.metrics.accuracy:.3f}"
        logging.info("%-9s %-32s %3dpx acc=%s", t.variant, t.hyperparams.label(), t.image_size, acc)


if __name__ == "__main__":
    main()
