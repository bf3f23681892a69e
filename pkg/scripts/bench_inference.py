"""Per-image inference time of both variants across image sizes.

    python scripts/bench_inference.py --sizes 128 256 512 --runs 10

Weights are freshly initialised; timing does not depend on their values.
"""
from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, field, replace

from threadpoolctl import threadpool_limits

from bathcls.model import VARIANTS, ModelConfig, build_model, count_params
from bathcls.trainer import time_inference

REFERENCE_SECONDS = {"decusr": 5.49e-5, "decusr_l": 4.79e-5}


@dataclass
class BenchConfig:
    sizes: list = field(default_factory=lambda: [128, 256, 512])
    runs: int = 10
    warmup: int = 3
    threads: int = 1
    seed: int = 0
    base: ModelConfig = field(default_factory=ModelConfig)


def run(cfg: BenchConfig) -> list[dict]:
    rows = []
    with threadpool_limits(cfg.threads):
        for size in cfg.sizes:
            for v in VARIANTS:
                g = build_model(replace(cfg.base, variant=v, input_size=size), seed=cfg.seed)
                t = time_inference(g, None, size, cfg.warmup, cfg.runs, cfg.seed)
                rows.append({"variant": v, "image_size": size, "params": count_params(g),
                             "mean_s": t.mean_seconds, "std_s": t.std_seconds,
                             "reference_s": REFERENCE_SECONDS[v]})
                print(f"{v:<9} {size:>5}px  {t.mean_seconds:.3e} s  (+/- {t.std_seconds:.1e})", file=sys.stderr)
    return rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[128, 256, 512])
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default="bench_sizes.csv")
    a = p.parse_args(argv)
    rows = run(BenchConfig(sizes=a.sizes, runs=a.runs, threads=a.threads))
    with open(a.out, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()
