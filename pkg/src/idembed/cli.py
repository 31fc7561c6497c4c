"""Command-line entry point: ``idembed {generate,train,evaluate,ablate,sweep}``.

Exit codes: 0 success, 2 configuration error, 3 missing input, 4 numeric
failure (non-finite loss).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import config as cfgmod
from .attention import AttentionLog
from .config import ConfigError, ExperimentConfig
from .data import build_benchmark, load_benchmark, save_benchmark
from .evaluation import evaluate
from .experiments import (
    ensure_dir, initial_params, run_ablation, run_cross_scene, run_training, sigma_sweep,
    summarize, sweep_spread, write_ablation_summary, write_ablation_table, write_sweep,
)
from .losses import LossLog
from .params import CheckpointError, ParamStore
from .training import NumericalError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

log = logging.getLogger("idembed")


class MissingInput(Exception):
    pass


def _setup_logging() -> None:
    name = os.environ.get("IDE_LOG_LEVEL", "warn").lower()
    if name not in LOG_LEVELS:
        raise ConfigError(f"IDE_LOG_LEVEL must be one of {sorted(LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(level=LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s")


def _load_config(args) -> ExperimentConfig:
    if args.config is None:
        cfg = ExperimentConfig()
    else:
        if not Path(args.config).exists():
            raise MissingInput(f"config file not found: {args.config}")
        cfg = cfgmod.load(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed, evaluation__seeds=(args.seed,))
    if getattr(args, "iterations", None) is not None:
        if args.iterations < 0:
            raise ConfigError("--iterations must be >= 0")
        cfg = cfg.replace(training__iterations=args.iterations)
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    return ensure_dir(args.out if args.out is not None else cfg.output.directory)


def _require_benchmark(args):
    path = args.benchmark
    if path is None or not (Path(path) / "manifest.json").exists():
        raise MissingInput(f"benchmark not found: {path}")
    return load_benchmark(path, with_flags=False)


def _require_checkpoint(path) -> ParamStore:
    if path is None or not Path(path).exists():
        raise MissingInput(f"checkpoint not found: {path}")
    return ParamStore.load(path)


def cmd_generate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    bench = build_benchmark(cfg.benchmark_config())
    save_benchmark(bench, out, config_hash=cfgmod.fingerprint(cfg))
    (out / "config.ini").write_text(cfgmod.dumps(cfg))
    log.info("benchmark written to %s", out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    bench = _require_benchmark(args)
    if len(bench.train.identities()) != cfg.world.num_train_ids:
        raise ConfigError(
            f"benchmark has {len(bench.train.identities())} training identities, "
            f"config expects world.num_train_ids = {cfg.world.num_train_ids}"
        )
    out = _out_dir(args, cfg)
    if args.checkpoint is not None:
        params = _require_checkpoint(args.checkpoint)
        start = params.iteration
    else:
        params = initial_params(cfg, cfg.seed)
        start = 0
    loss_path = out / "losses.csv"
    resume = start > 0 and loss_path.exists()
    att_fh = None
    try:
        with open(loss_path, "a" if resume else "w", newline="") as fh:
            att_log = None
            if cfg.training.attention_log:
                att_path = out / "attention.csv"
                att_fh = open(att_path, "a" if resume and att_path.exists() else "w", newline="")
                att_log = AttentionLog(att_fh, write_header=att_fh.tell() == 0)
            try:
                params = run_training(
                    cfg, bench, cfg.seed, params=params, start_iteration=start,
                    loss_log=LossLog(fh, write_header=not resume), attention_log=att_log,
                )
            except NumericalError as e:
                (out / "nan_dump.json").write_text(json.dumps(e.state, indent=2, sort_keys=True) + "\n")
                raise
    finally:
        if att_fh is not None:
            att_fh.close()
    params.save(out / "checkpoint.npz")
    (out / "config.ini").write_text(cfgmod.dumps(cfg))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    params = _require_checkpoint(args.checkpoint)
    bench = _require_benchmark(args)
    out = _out_dir(args, cfg)
    fp = cfgmod.fingerprint(cfg)
    report = evaluate(bench.test.sets, bench.test.sets, params, fp, cfg.seed)
    report.write(out / "eval_report.json")
    report.write_cmc_csv(out / "cmc.csv")
    if bench.cross_test is not None:
        cross = run_cross_scene(bench, bench.cross_test, params, fp, cfg.seed)
        cross.write(out / "cross_eval_report.json")
        cross.write_cmc_csv(out / "cross_cmc.csv")
    print(f"CMC-1 {report.cmc1:.4f}  mAP {report.map:.4f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    fp = cfgmod.fingerprint(cfg)
    results = run_ablation(cfg, jobs=args.jobs)
    write_ablation_table(out / "ablation_table.csv", results, fp)
    write_ablation_summary(out / "ablation_summary.csv", results, fp)
    for cell, s in summarize(results).items():
        print(f"{cell:12s} CMC-1 {s['cmc1_mean']:.4f} ± {s['cmc1_std']:.4f}  "
              f"mAP {s['map_mean']:.4f}  cross CMC-1 {s['cross_cmc1_mean']:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    fp = cfgmod.fingerprint(cfg)
    axes = ["fla", "ffa"] if args.axis == "both" else [args.axis]
    rows = []
    for axis in axes:
        grid = getattr(cfg.evaluation, f"sigma_{axis}_grid")
        if args.values:
            grid = tuple(args.values)
        part = sigma_sweep(cfg, axis, grid, jobs=args.jobs)
        print(f"sigma_{axis}: spread of seed-mean CMC-1 {sweep_spread(part):.4f}")
        rows += part
    write_sweep(out / "sigma_sweep.csv", rows, fp)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="idembed", description="Train and evaluate confidence-weighted set embeddings."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, benchmark=False, checkpoint=False, jobs=False, iterations=False):
        p.add_argument("--config", help="INI experiment config (defaults apply when omitted)")
        p.add_argument("--out", help="output directory (default: [output] directory)")
        p.add_argument("--seed", type=int, help="override the config seed")
        if benchmark:
            p.add_argument("--benchmark", help="benchmark directory written by 'generate'")
        if checkpoint:
            p.add_argument("--checkpoint", help="parameter checkpoint (.npz)")
        if jobs:
            p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        if iterations:
            p.add_argument("--iterations", type=int, help="override training iterations")
        return p

    common(sub.add_parser("generate", help="write a synthetic benchmark")).set_defaults(func=cmd_generate)
    common(sub.add_parser("train", help="train (or resume) on a benchmark"),
           benchmark=True, checkpoint=True, iterations=True).set_defaults(func=cmd_train)
    common(sub.add_parser("evaluate", help="CMC / mAP of a checkpoint"),
           benchmark=True, checkpoint=True).set_defaults(func=cmd_evaluate)
    common(sub.add_parser("ablate", help="run the attention ablation grid over seeds"),
           jobs=True, iterations=True).set_defaults(func=cmd_ablate)
    sw = common(sub.add_parser("sweep", help="sigma sensitivity sweep"), jobs=True, iterations=True)
    sw.add_argument("--axis", choices=("fla", "ffa", "both"), default="both")
    sw.add_argument("--values", type=float, nargs="+", help="sigma values (default: config grid)")
    sw.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _setup_logging()
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingInput, FileNotFoundError, CheckpointError) as e:
        print(f"missing input: {e}", file=sys.stderr)
        return EXIT_MISSING
    except NumericalError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
