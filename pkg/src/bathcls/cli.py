"""Command-line entry point.

Exit codes: 0 success, 1 operational failure (diverged run, failed gradient
check), 2 usage or configuration error. Progress goes to stderr. Reports are
written under the configured output directory; ``dataset-stats``,
``gradcheck``, ``predict`` and ``bench`` also print their result to stdout.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import gradcheck, trainer
from .config import ConfigError, RunConfig, check_paths, load_config
from .dataset import ImageDecodeError, ManifestError, load_manifest, stats
from .model import VARIANTS, FingerprintMismatch, WeightFormatError, build_model, count_params, load_weights, save_weights
from .sweep import PhaseReport, emit_results_table, enumerate_grid, run_phase1, run_phase2

log = logging.getLogger("bathcls")

# Published per-image inference times, printed for comparison only.
REFERENCE_SECONDS = {"decusr": 5.49e-5, "decusr_l": 4.79e-5}
GRADCHECK_SEEDS = 20


class UsageError(Exception):
    pass


class OperationalFailure(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bathcls", description="Bathroom image classifier pipeline.")
    p.add_argument("--threads", type=int, default=None, help="BLAS and worker thread cap (env BATHCLS_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    s = sub.add_parser("dataset-stats", help="label/split counts of a manifest")
    s.add_argument("manifest")

    s = sub.add_parser("gradcheck", help="finite-difference check of every layer and small whole models")
    s.add_argument("--seeds", type=int, default=GRADCHECK_SEEDS)
    s.add_argument("--skip-model", action="store_true", help="layers only")

    s = sub.add_parser("train", help="train one configuration")
    s.add_argument("config")

    s = sub.add_parser("eval", help="evaluate weights on the test split")
    s.add_argument("config")
    s.add_argument("--weights", required=True)

    s = sub.add_parser("predict", help="score one image")
    s.add_argument("config")
    s.add_argument("--weights", required=True)
    s.add_argument("image")

    s = sub.add_parser("sweep", help="two-phase hyperparameter sweep")
    phases = s.add_subparsers(dest="phase", metavar="phase")
    phases.required = True
    ph = phases.add_parser("phase1")
    ph.add_argument("config")
    ph = phases.add_parser("phase2")
    ph.add_argument("config")
    ph.add_argument("--phase1", required=True, help="phase-1 report JSON")

    s = sub.add_parser("bench", help="per-image inference time of both variants")
    s.add_argument("config")
    s.add_argument("--weights", action="append", default=[], help="weights for one variant (repeatable)")
    s.add_argument("--runs", type=int, default=10)
    s.add_argument("--warmup", type=int, default=3)
    return p


def _threads(args) -> int | None:
    if args.threads is not None:
        n = args.threads
    elif os.environ.get("BATHCLS_THREADS"):
        try:
            n = int(os.environ["BATHCLS_THREADS"])
        except ValueError:
            raise UsageError("BATHCLS_THREADS must be an integer")
    else:
        return None
    if n < 1:
        raise UsageError("thread count must be >= 1")
    return n


def _config(path, threads) -> RunConfig:
    cfg = load_config(path)
    check_paths(cfg)
    if threads is not None:
        cfg.threads = threads
    elif cfg.threads is not None:
        # Lowest-precedence source; the limit stays in force for the process.
        threadpool_limits(cfg.threads)
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_and_val(cfg: RunConfig, source, size: int):
    train_recs, val_recs = trainer.split_validation(source.records("train"), cfg.train.validation_fraction, cfg.seed)
    return source.load(train_recs, size), source.load(val_recs, size)


def cmd_dataset_stats(args, threads) -> int:
    try:
        m = load_manifest(args.manifest)
    except OSError as e:
        raise UsageError(f"cannot read manifest: {e}")
    print(stats(m).table())
    return 0


def cmd_gradcheck(args, threads) -> int:
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    failed = 0
    worst: dict = {}
    for seed in range(args.seeds):
        reports = gradcheck.layer_checks(seed)
        if not args.skip_model:
            configs = gradcheck.tiny_model_configs("elu")
            reports.append(gradcheck.check_model(configs[seed % len(configs)], seed))
        for r in reports:
            key = r.name.split("[")[0]
            worst[key] = max(worst.get(key, 0.0), r.max_rel_error)
            if not r.passed:
                failed += 1
                log.error("seed %d %s", seed, r.line())
        log.info("seed %d done", seed)
    for key, err in worst.items():
        print(f"{key:<24} max_rel_err={err:.3e} {'PASS' if err < 1e-4 else 'FAIL'}")
    print("all checks passed" if not failed else f"{failed} checks failed")
    return 1 if failed else 0


def cmd_train(args, threads) -> int:
    cfg = _config(args.config, threads)
    out = _out_dir(cfg)
    spec = cfg.train_spec()
    train, val = _train_and_val(cfg, cfg.source(), spec.image_size)
    graph = build_model(cfg.model_config(), seed=cfg.seed)
    log.info("training %s %s on %d images (%d validation)", cfg.model.variant, spec.hyperparams.label(), len(train), len(val))
    report, _ = trainer.train_model(graph, train, val, spec)
    trainer.write_train_log(report, out / "train_log.csv")
    save_weights(graph, out / "weights.bwt")
    (out / "train_report.json").write_text(json.dumps(report.summary(), indent=1))
    if report.diverged:
        raise OperationalFailure("training diverged (non-finite loss)")
    log.info("best epoch %s of %d", report.best_epoch, len(report.epochs))
    return 0


def _loaded_graph(cfg: RunConfig, weights_path):
    graph = build_model(cfg.model_config(), seed=cfg.seed)
    snap = load_weights(graph, weights_path)
    return graph, snap


def cmd_eval(args, threads) -> int:
    cfg = _config(args.config, threads)
    graph, snap = _loaded_graph(cfg, args.weights)
    source = cfg.source()
    test = source.load(source.records("test"), cfg.train.image_size)
    report = trainer.evaluate(graph, snap, test)
    out = _out_dir(cfg)
    (out / "eval.json").write_text(json.dumps(report.to_dict(), indent=1))
    log.info("accuracy=%.3f auc=%s loss=%.3f", report.accuracy, report.auc, report.mean_loss)
    return 0


def cmd_predict(args, threads) -> int:
    cfg = _config(args.config, threads)
    graph, snap = _loaded_graph(cfg, args.weights)
    try:
        pred = trainer.predict(graph, snap, args.image)
    except ImageDecodeError as e:
        raise OperationalFailure(str(e))
    print(f"score={pred.score!r} label={pred.label}")
    return 0


def _sweep_kwargs(cfg: RunConfig) -> dict:
    t = cfg.train
    return dict(
        seed=cfg.seed,
        batch_size=t.batch_size,
        patience=t.patience,
        validation_fraction=t.validation_fraction,
        workers=1 if cfg.threads == 1 else cfg.sweep.workers,
    )


def cmd_sweep(args, threads) -> int:
    cfg = _config(args.config, threads)
    out = _out_dir(cfg)
    s = cfg.sweep
    logs = out / "logs"
    logs.mkdir(exist_ok=True)
    if args.phase == "phase1":
        grid = enumerate_grid(s.optimizers, s.activations, s.learning_rates, s.use_maxpool, s.use_batchnorm)
        log.info("phase 1: %d grid points x %d variants", len(grid), len(s.variants))
        report = run_phase1(
            cfg.source(), cfg.model_config(), grid, tuple(s.variants), s.phase1_epochs, s.phase1_image_size,
            per_model=s.per_model, log_dir=logs, **_sweep_kwargs(cfg),
        )
        report.save(out / "phase1.json")
        emit_results_table(report, out / "phase1.csv")
        if not report.selected:
            raise OperationalFailure("phase 1 produced too few ok trials to select from")
        return 0
    try:
        p1 = PhaseReport.load(args.phase1)
    except (OSError, KeyError, ValueError, TypeError) as e:
        raise UsageError(f"cannot read phase-1 report: {e}")
    if not p1.selected:
        raise UsageError("phase-1 report has no selected configurations")
    report = run_phase2(
        p1.selected, cfg.source(), cfg.model_config(), tuple(s.phase2_sizes), s.phase2_epochs,
        log_dir=logs, **_sweep_kwargs(cfg),
    )
    report.save(out / "phase2.json")
    emit_results_table(report, out / "results.csv")
    n_bad = sum(t.status != "ok" for t in report.trials)
    if n_bad:
        log.warning("%d of %d phase-2 trials diverged", n_bad, len(report.trials))
    return 0


def cmd_bench(args, threads) -> int:
    cfg = _config(args.config, threads)
    if args.runs < 1 or args.warmup < 0:
        raise UsageError("--runs must be >= 1 and --warmup >= 0")
    size = cfg.train.image_size
    graphs = {v: build_model(replace(cfg.model_config(), variant=v), seed=cfg.seed) for v in VARIANTS}
    for path in args.weights:
        for v, g in graphs.items():
            try:
                load_weights(g, path)
                log.info("loaded %s into %s", path, v)
                break
            except FingerprintMismatch:
                continue
        else:
            raise UsageError(f"{path} matches neither variant under this config")
    rows = {}
    for v, g in graphs.items():
        timing = trainer.time_inference(g, None, size, warmup=args.warmup, runs=args.runs, seed=cfg.seed)
        rows[v] = {"mean_seconds": timing.mean_seconds, "std_seconds": timing.std_seconds, "runs": timing.runs,
                   "params": count_params(g), "reference_seconds": REFERENCE_SECONDS[v]}
    print(f"{'variant':<10}{'params':>10}{'mean_s':>12}{'std_s':>12}{'reference_s':>14}")
    for v, r in rows.items():
        print(f"{v:<10}{r['params']:>10}{r['mean_seconds']:>12.3e}{r['std_seconds']:>12.3e}{r['reference_seconds']:>14.2e}")
    fewer = rows["decusr_l"]["params"] < rows["decusr"]["params"]
    faster = rows["decusr_l"]["mean_seconds"] <= rows["decusr"]["mean_seconds"]
    print(f"params(decusr_l) < params(decusr): {'yes' if fewer else 'NO'}")
    print(f"decusr_l no slower than decusr: {'yes' if faster else 'no (report only)'}")
    out = _out_dir(cfg)
    (out / "bench.json").write_text(json.dumps({"image_size": size, "variants": rows,
                                                "fewer_params": fewer, "faster": faster}, indent=1))
    if not fewer:
        raise OperationalFailure("lightweight variant does not have fewer parameters")
    return 0


COMMANDS = {
    "dataset-stats": cmd_dataset_stats,
    "gradcheck": cmd_gradcheck,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "sweep": cmd_sweep,
    "bench": cmd_bench,
}


def dispatch(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(stream=sys.stderr, level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        threads = _threads(args)
        limit = threadpool_limits(threads) if threads is not None else contextlib.nullcontext()
        with limit:
            return COMMANDS[args.command](args, threads)
    except (UsageError, ConfigError, ManifestError, FileNotFoundError, WeightFormatError, FingerprintMismatch) as e:
        print(f"bathcls: error: {e}", file=sys.stderr)
        return 2
    except OperationalFailure as e:
        print(f"bathcls: failed: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
