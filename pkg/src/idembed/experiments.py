"""Experiment protocols: single runs, the ablation grid, cross-scene tests and
sigma sweeps, plus the CSV/JSON writers for their results.

Every run follows the same two-stage recipe:

1. (optional) pretraining: a network is trained with plain cross-entropy on a
   separate pool of auxiliary identities that never appear in any split. Its
   trunk, without the classifier head, initialises the next stage.
2. fine-tuning on the benchmark's training split with the configured
   objective, at a small learning rate, with a fresh classifier head.

Pretraining depends only on (config, seed), so it is computed once per seed
and shared by every ablation cell.
"""
from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import ExperimentConfig, dumps, fingerprint
from .data import Benchmark, CorruptionSpec, Split, build_benchmark, generate_world, sample_set
from .evaluation import EvalReport, evaluate
from .losses import LossConfig, LossLog
from .attention import AttentionLog
from .model import init_params
from .params import ParamStore
from .training import train

log = logging.getLogger(__name__)

# cell name -> (ce_mode, fusion_mode used in training)
CELLS = {
    "baseline": ("standard", "average"),
    "fla": ("fla_weighted", "average"),
    "ffa": ("standard", "ffa"),
    "fla_ffa": ("fla_weighted", "ffa"),
    "fla_ffa_mh": ("fla_weighted", "ffa_mh"),
}
CELL_LABELS = {
    "baseline": "Baseline",
    "fla": "FLA",
    "ffa": "FFA",
    "fla_ffa": "FLA+FFA",
    "fla_ffa_mh": "FLA+FFA_MH",
}

# auxiliary identities get labels far away from any benchmark split
_AUX_LABEL_BASE = 1_000_000
_TAG_AUX = 99


def aux_sets(cfg: ExperimentConfig, seed: int) -> list:
    """Clean sets of the auxiliary identities used for pretraining."""
    p = cfg.pretrain
    world = generate_world(
        p.num_identities, cfg.world.input_dim, seed, cfg.scene_spec(), scene_id=0,
        first_label=_AUX_LABEL_BASE,
    )
    spec = CorruptionSpec(
        perceptual_noise_sigma=cfg.corruption.perceptual_noise_sigma,
        outlier_rate=0.0,
        severity_jitter=(cfg.corruption.severity_low, cfg.corruption.severity_high),
    )
    return [
        sample_set(world, int(label), cfg.world.items_per_set, spec,
                   seed=[seed, _TAG_AUX, i * p.sets_per_id + c], camera_id=c).view()
        for i, label in enumerate(world.labels)
        for c in range(p.sets_per_id)
    ]


def pretrain(cfg: ExperimentConfig, seed: int) -> ParamStore | None:
    if not cfg.pretrain.enabled:
        return None
    p = cfg.pretrain
    tcfg = cfg.train_config(
        seed,
        iterations=p.iterations,
        learning_rate=p.learning_rate,
        ce_mode="standard",
        fusion_mode="average",
        loss=LossConfig(cfg.loss.margin, (1.0, 0.0)),
        lr_decay=0.0,
        head_lr_mult=1.0,
    )
    log.info("pretraining seed %d on %d auxiliary identities", seed, p.num_identities)
    return train(aux_sets(cfg, seed), cfg.embedder_config(p.num_identities), tcfg)


_trunk_cache: dict = {}


def _pretrain_key(cfg: ExperimentConfig, seed: int) -> tuple:
    # everything pretraining reads; outlier rate, sigmas, splits etc. do not matter
    t = cfg.training
    return (
        seed, cfg.world.input_dim, cfg.world.items_per_set,
        cfg.corruption.perceptual_noise_sigma, cfg.corruption.severity_low,
        cfg.corruption.severity_high, cfg.scene, cfg.model, cfg.pretrain, cfg.loss.margin,
        t.persons_per_batch, t.sets_per_person, t.items_per_set,
    )


def pretrained_trunk(cfg: ExperimentConfig, seed: int) -> dict | None:
    """Pretrained parameter values for ``seed`` (memoised in-process)."""
    key = _pretrain_key(cfg, seed)
    if key not in _trunk_cache:
        if len(_trunk_cache) >= 8:
            _trunk_cache.pop(next(iter(_trunk_cache)))
        params = pretrain(cfg, seed)
        _trunk_cache[key] = None if params is None else params.values()
    return _trunk_cache[key]


def initial_params(cfg: ExperimentConfig, seed: int) -> ParamStore:
    """Fresh parameters for ``seed`` with the pretrained trunk copied in."""
    params = init_params(cfg.embedder_config(), seed)
    trunk = pretrained_trunk(cfg, seed)
    if trunk is not None:
        for name, value in trunk.items():
            if name != "head":
                params[name].value[...] = value
    return params


def run_training(
    cfg: ExperimentConfig,
    bench: Benchmark,
    seed: int,
    ce_mode: str | None = None,
    fusion_mode: str | None = None,
    params: ParamStore | None = None,
    start_iteration: int = 0,
    loss_log: LossLog | None = None,
    attention_log: AttentionLog | None = None,
) -> ParamStore:
    """Fine-tune on ``bench.train`` (from the pretrained trunk unless ``params`` is given)."""
    overrides = {}
    if ce_mode is not None:
        overrides["ce_mode"] = ce_mode
    if fusion_mode is not None:
        overrides["fusion_mode"] = fusion_mode
    tcfg = cfg.train_config(seed, **overrides)
    if params is None:
        params = initial_params(cfg, seed)
    model_cfg = cfg.embedder_config(len(bench.train.identities()))
    return train(
        bench.train.views(), model_cfg, tcfg, params=params,
        start_iteration=start_iteration, loss_log=loss_log, attention_log=attention_log,
    )


def run_cross_scene(train_bench: Benchmark, foreign: Split, params: ParamStore,
                    fp: str = "", seed: int | None = None) -> EvalReport:
    """Evaluate a model trained on ``train_bench`` on a split from another scene."""
    shared = train_bench.train.identities() & foreign.identities()
    if shared:
        raise ValueError(f"foreign split shares identities with training: {sorted(shared)[:5]}")
    return evaluate(foreign.sets, foreign.sets, params, fp, seed)


@dataclass
class CellResult:
    cell: str
    seed: int
    within: EvalReport
    cross: EvalReport | None

    @property
    def cmc1(self) -> float:
        return self.within.cmc1

    @property
    def map(self) -> float:
        return self.within.map

    @property
    def cross_cmc1(self) -> float:
        return float("nan") if self.cross is None else self.cross.cmc1


def run_cell(cfg: ExperimentConfig, cell: str | tuple[str, str], seed: int) -> CellResult:
    """Train one grid cell on the benchmark for ``seed`` and evaluate it."""
    if isinstance(cell, str):
        name, (ce, fu) = cell, CELLS[cell]
    else:
        ce, fu = cell
        name = f"{ce}/{fu}"
    bench = build_benchmark(cfg.benchmark_config(seed))
    params = run_training(cfg, bench, seed, ce, fu)
    fp = fingerprint(cfg)
    within = evaluate(bench.test.sets, bench.test.sets, params, fp, seed)
    cross = None
    if bench.cross_test is not None:
        cross = run_cross_scene(bench, bench.cross_test, params, fp, seed)
    log.info("cell %s seed %d: cmc1 %.4f map %.4f", name, seed, within.cmc1, within.map)
    return CellResult(name, seed, within, cross)


def _run_cell_job(args):
    canonical, cell, seed = args
    from .config import loads

    return run_cell(loads(canonical), cell, seed)


def _map_jobs(jobs_args: list, jobs: int) -> list:
    if jobs <= 1 or len(jobs_args) <= 1:
        return [_run_cell_job(a) for a in jobs_args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_cell_job, jobs_args))


def run_ablation(
    cfg: ExperimentConfig,
    cells: Sequence[str | tuple[str, str]] | None = None,
    seeds: Iterable[int] | None = None,
    jobs: int = 1,
) -> list[CellResult]:
    """Every cell for every seed; results are independent of ``jobs``.

    Seeds run in the outer loop so each seed's pretrained trunk is computed
    once and reused by all of its cells.
    """
    cells = list(cfg.evaluation.cells if cells is None else cells)
    seeds = list(cfg.evaluation.seeds if seeds is None else seeds)
    canonical = dumps(cfg)
    args = [(canonical, c, s) for s in seeds for c in cells]
    return _map_jobs(args, jobs)


def summarize(results: Sequence[CellResult]) -> dict[str, dict[str, float]]:
    """Per-cell mean and standard deviation (over seeds) of CMC-1, mAP and cross-scene CMC-1."""
    out: dict[str, dict[str, float]] = {}
    for name in dict.fromkeys(r.cell for r in results):
        rows = [r for r in results if r.cell == name]
        v = np.array([[r.cmc1, r.map, r.cross_cmc1] for r in rows])
        out[name] = {
            "cmc1_mean": float(v[:, 0].mean()), "cmc1_std": float(v[:, 0].std()),
            "map_mean": float(v[:, 1].mean()), "map_std": float(v[:, 1].std()),
            "cross_cmc1_mean": float(v[:, 2].mean()), "cross_cmc1_std": float(v[:, 2].std()),
            "seeds": len(rows),
        }
    return out


def paired_difference(results: Sequence[CellResult], a: str, b: str, key: str = "cmc1"):
    """Mean and std over seeds of ``metric(a) - metric(b)`` on matching seeds."""
    va = {r.seed: getattr(r, key) for r in results if r.cell == a}
    vb = {r.seed: getattr(r, key) for r in results if r.cell == b}
    common = sorted(set(va) & set(vb))
    if not common:
        raise ValueError(f"no common seeds for {a} and {b}")
    d = np.array([va[s] - vb[s] for s in common])
    return float(d.mean()), float(d.std())


def sigma_sweep(
    cfg: ExperimentConfig,
    axis: str,
    values: Sequence[float],
    seeds: Iterable[int] | None = None,
    cell: str = "fla_ffa",
    jobs: int = 1,
) -> list[dict]:
    """CMC-1 of ``cell`` for each sigma value on ``axis`` ('fla' or 'ffa'), per seed.

    The other sigma stays at its configured value.
    """
    if axis not in ("fla", "ffa"):
        raise ValueError("axis must be 'fla' or 'ffa'")
    seeds = list(cfg.evaluation.seeds if seeds is None else seeds)
    args = []
    for v in values:
        c = cfg.replace(**{f"attention__sigma_{axis}": float(v)})
        args += [(dumps(c), cell, s) for s in seeds]
    results = _map_jobs(args, jobs)
    rows = []
    i = 0
    for v in values:
        for s in seeds:
            r = results[i]
            i += 1
            rows.append({"axis": axis, "sigma": float(v), "seed": s, "cmc1": r.cmc1, "map": r.map})
    return rows


def sweep_spread(rows: Sequence[dict]) -> float:
    """Max minus min, over sigma values, of the seed-mean CMC-1."""
    means = {}
    for r in rows:
        means.setdefault(r["sigma"], []).append(r["cmc1"])
    m = [float(np.mean(v)) for v in means.values()]
    return max(m) - min(m)


# ----------------------------------------------------------------------------
# writers


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_ablation_table(path, results: Sequence[CellResult], fp: str) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(("cell", "seed", "cmc1", "map", "cross_cmc1", "config_fingerprint"))
        for r in results:
            w.writerow((r.cell, r.seed, repr(r.cmc1), repr(r.map), repr(r.cross_cmc1), fp))


def write_ablation_summary(path, results: Sequence[CellResult], fp: str) -> None:
    summary = summarize(results)
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(("cell", "seeds", "cmc1_mean", "cmc1_std", "map_mean", "map_std",
                    "cross_cmc1_mean", "cross_cmc1_std", "config_fingerprint"))
        for cell, s in summary.items():
            w.writerow((cell, s["seeds"], repr(s["cmc1_mean"]), repr(s["cmc1_std"]),
                        repr(s["map_mean"]), repr(s["map_std"]),
                        repr(s["cross_cmc1_mean"]), repr(s["cross_cmc1_std"]), fp))


def write_sweep(path, rows: Sequence[dict], fp: str) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(("axis", "sigma", "seed", "cmc1", "map", "config_fingerprint"))
        for r in rows:
            w.writerow((r["axis"], repr(r["sigma"]), r["seed"], repr(r["cmc1"]), repr(r["map"]), fp))


def ensure_dir(path: str | os.PathLike) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
