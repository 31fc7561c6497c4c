"""Synthetic set-based identity benchmarks in feature space.

An identity is a prototype vector living in a low-rank identity subspace.
Items of a set are the prototype plus structured noise:

* per-item isotropic noise, scaled by a per-item severity in
  ``severity_jitter * sigma`` (perceptual degradation);
* nuisance noise confined to a scene-specific subspace orthogonal to the
  identity subspace, both per item and shared by the whole set (viewpoint,
  background, tracklet drift);
* with probability ``outlier_rate`` an item is drawn from a different
  identity while the set keeps its label (occlusion by another person,
  tracking switches).

All generators are pure functions of their configuration and seed. Every set
draws from its own generator seeded with ``(seed, tag, index)`` so splits can
be generated independently and in any order.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import DimensionError

BENCHMARK_FORMAT_VERSION = 1

_TAG_BASIS = 1
_TAG_PROTO = 2
_TAG_SET = 3
_TAG_BATCH = 4


@dataclass(frozen=True)
class CorruptionSpec:
    perceptual_noise_sigma: float = 0.5
    outlier_rate: float = 0.2
    severity_jitter: tuple[float, float] = (0.5, 1.5)

    def __post_init__(self):
        object.__setattr__(self, "severity_jitter", tuple(float(v) for v in self.severity_jitter))
        if not 0.0 <= self.outlier_rate < 1.0:
            raise ValueError("outlier_rate must lie in [0, 1)")
        if self.perceptual_noise_sigma < 0:
            raise ValueError("perceptual_noise_sigma must be >= 0")
        lo, hi = self.severity_jitter
        if not 0 <= lo <= hi:
            raise ValueError("severity_jitter must be an ordered non-negative range")


@dataclass(frozen=True)
class SceneSpec:
    """Noise structure shared by every set captured in one scene."""

    identity_rank: int = 8
    nuisance_rank: int = 8
    item_nuisance_gain: float = 1.0
    set_nuisance_gain: float = 2.0
    prototype_scale: float = 1.0
    # 0 keeps the home nuisance subspace, 1 rotates it onto fresh directions
    scene_shift: float = 0.0

    def __post_init__(self):
        if self.identity_rank <= 0 or self.nuisance_rank < 0:
            raise ValueError("ranks must be positive")
        if not 0.0 <= self.scene_shift <= 1.0:
            raise ValueError("scene_shift must lie in [0, 1]")


@dataclass
class IdentityWorld:
    labels: np.ndarray  # global identity labels, one per prototype row
    prototypes: np.ndarray
    identity_basis: np.ndarray
    nuisance_basis: np.ndarray
    scene: SceneSpec
    scene_id: int
    seed: int

    @property
    def num_identities(self) -> int:
        return len(self.labels)

    @property
    def input_dim(self) -> int:
        return self.prototypes.shape[1]

    def index_of(self, label: int) -> int:
        hits = np.flatnonzero(self.labels == label)
        if len(hits) == 0:
            raise KeyError(f"identity {label} not in world")
        return int(hits[0])


@dataclass
class SetView:
    """What training and evaluation code may see of a set."""

    items: np.ndarray
    set_label: int
    camera_id: int


@dataclass
class SetSample:
    items: np.ndarray
    set_label: int
    corruption_flags: np.ndarray  # analysis only
    camera_id: int = 0

    def view(self) -> SetView:
        return SetView(self.items, self.set_label, self.camera_id)

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class MiniBatch:
    items: np.ndarray  # (m, n, input_dim)
    labels: np.ndarray  # (m,)

    @property
    def num_sets(self) -> int:
        return self.items.shape[0]

    @property
    def items_per_set(self) -> int:
        return self.items.shape[1]


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *(int(t) for t in tags)])


def _bases(input_dim: int, scene: SceneSpec, seed: int) -> tuple[np.ndarray, np.ndarray]:
    r, q = scene.identity_rank, scene.nuisance_rank
    if r + 2 * q > input_dim:
        raise DimensionError(
            f"input_dim {input_dim} too small for identity rank {r} and nuisance rank {q}"
        )
    # the orthogonal frame depends on the seed only; scenes share the identity subspace
    frame, _ = np.linalg.qr(_rng(seed, _TAG_BASIS).standard_normal((input_dim, input_dim)))
    identity = frame[:, :r]
    home = frame[:, r : r + q]
    # a shifted scene tilts its nuisance towards the identity subspace, so
    # noise lands on directions the home scene never taught the model to ignore
    away = np.concatenate([identity, frame[:, r + q : r + 2 * q]], axis=1)[:, :q]
    theta = scene.scene_shift * np.pi / 2
    nuisance = np.cos(theta) * home + np.sin(theta) * away
    return identity, nuisance


def generate_world(
    num_ids: int,
    input_dim: int,
    seed: int,
    scene: SceneSpec | None = None,
    scene_id: int = 0,
    first_label: int = 0,
) -> IdentityWorld:
    """Identities ``first_label .. first_label+num_ids-1`` with distinct prototypes."""
    if num_ids < 2:
        raise ValueError("a world needs at least two identities")
    if input_dim <= 0:
        raise DimensionError("input_dim must be positive")
    scene = scene or SceneSpec()
    identity, nuisance = _bases(input_dim, scene, seed)
    rng = _rng(seed, _TAG_PROTO, scene_id, first_label)
    coords = rng.standard_normal((num_ids, scene.identity_rank)) * scene.prototype_scale
    prototypes = coords @ identity.T
    diffs = prototypes[:, None, :] - prototypes[None, :, :]
    dist = np.sqrt((diffs**2).sum(-1))
    if np.min(dist[np.triu_indices(num_ids, 1)]) <= 0:
        raise ValueError("generated prototypes are not pairwise distinct")
    return IdentityWorld(
        labels=np.arange(first_label, first_label + num_ids),
        prototypes=prototypes,
        identity_basis=identity,
        nuisance_basis=nuisance,
        scene=scene,
        scene_id=scene_id,
        seed=seed,
    )


def _draw_items(world, rows, sigma, severity, set_offset, rng) -> np.ndarray:
    n, dim = len(rows), world.input_dim
    q = world.nuisance_basis.shape[1]
    scale = (sigma * severity)[:, None]
    iso = rng.standard_normal((n, dim))
    nuis = rng.standard_normal((n, q)) @ world.nuisance_basis.T
    return (
        world.prototypes[rows]
        + scale * (iso + world.scene.item_nuisance_gain * nuis)
        + set_offset
    )


def sample_set(
    world: IdentityWorld,
    identity: int,
    n: int,
    spec: CorruptionSpec,
    seed,
    camera_id: int = 0,
) -> SetSample:
    """One set of ``n`` items labelled ``identity``.

    ``seed`` may be an int or a sequence of ints (used as generator entropy).
    """
    if n < 1:
        raise ValueError("a set needs at least one item")
    home = world.index_of(identity)
    rng = np.random.default_rng(seed)
    flags = rng.random(n) < spec.outlier_rate
    others = np.delete(np.arange(world.num_identities), home)
    rows = np.full(n, home)
    if flags.any():
        rows[flags] = rng.choice(others, size=int(flags.sum()))
    lo, hi = spec.severity_jitter
    severity = rng.uniform(lo, hi, size=n)
    sigma = spec.perceptual_noise_sigma
    q = world.nuisance_basis.shape[1]
    set_offset = (
        sigma * world.scene.set_nuisance_gain * (rng.standard_normal(q) @ world.nuisance_basis.T)
    )
    items = _draw_items(world, rows, sigma, severity, set_offset, rng)
    return SetSample(items, int(identity), flags, int(camera_id))


@dataclass(frozen=True)
class BenchmarkConfig:
    num_train_ids: int = 60
    num_test_ids: int = 30
    sets_per_id: int = 4
    items_per_set: int = 40
    input_dim: int = 32
    corruption: CorruptionSpec = field(default_factory=CorruptionSpec)
    scene: SceneSpec = field(default_factory=SceneSpec)
    cross_scene: bool = True
    cross_scene_shift: float = 0.5
    cross_scene_id: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.num_train_ids < 2 or self.num_test_ids < 2:
            raise ValueError("each split needs at least two identities")
        if self.sets_per_id < 1 or self.items_per_set < 1:
            raise ValueError("sets_per_id and items_per_set must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkConfig":
        d = dict(d)
        d["corruption"] = CorruptionSpec(**d.get("corruption", {}))
        d["scene"] = SceneSpec(**d.get("scene", {}))
        return cls(**d)


@dataclass
class Split:
    name: str
    sets: list[SetSample]
    scene_id: int

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.set_label for s in self.sets])

    def identities(self) -> set[int]:
        return set(int(s.set_label) for s in self.sets)

    def views(self) -> list[SetView]:
        return [s.view() for s in self.sets]


@dataclass
class Benchmark:
    config: BenchmarkConfig
    train: Split
    test: Split
    cross_test: Split | None = None

    def splits(self) -> list[Split]:
        return [s for s in (self.train, self.test, self.cross_test) if s is not None]


def _make_split(name, world, labels, cfg: BenchmarkConfig, tag: int) -> Split:
    sets = []
    for label in labels:
        for cam in range(cfg.sets_per_id):
            idx = len(sets)
            sets.append(
                sample_set(
                    world, int(label), cfg.items_per_set, cfg.corruption,
                    seed=[cfg.seed, _TAG_SET, tag, idx], camera_id=cam,
                )
            )
    return Split(name, sets, world.scene_id)


def build_benchmark(cfg: BenchmarkConfig) -> Benchmark:
    """Train and test splits with disjoint identities, plus an optional
    test split from a shifted scene with its own identities."""
    n_home = cfg.num_train_ids + cfg.num_test_ids
    home = generate_world(n_home, cfg.input_dim, cfg.seed, cfg.scene, scene_id=0)
    train_ids = home.labels[: cfg.num_train_ids]
    test_ids = home.labels[cfg.num_train_ids :]
    train = _make_split("train", home, train_ids, cfg, 0)
    test = _make_split("test", home, test_ids, cfg, 1)
    cross = None
    if cfg.cross_scene:
        if cfg.cross_scene_id == 0:
            raise ValueError("cross-scene split must use a scene id other than 0")
        away_scene = SceneSpec(**{**asdict(cfg.scene), "scene_shift": cfg.cross_scene_shift})
        away = generate_world(
            cfg.num_test_ids, cfg.input_dim, cfg.seed, away_scene,
            scene_id=cfg.cross_scene_id, first_label=n_home,
        )
        cross = _make_split("cross_test", away, away.labels, cfg, 2)
    bench = Benchmark(cfg, train, test, cross)
    check_disjoint(bench)
    return bench


def check_disjoint(bench: Benchmark) -> None:
    splits = bench.splits()
    for i, a in enumerate(splits):
        for b in splits[i + 1 :]:
            shared = a.identities() & b.identities()
            if shared:
                raise ValueError(f"splits {a.name} and {b.name} share identities {sorted(shared)[:5]}")


def group_by_label(sets: Sequence[SetSample | SetView]) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for i, s in enumerate(sets):
        groups.setdefault(int(s.set_label), []).append(i)
    return groups


def sample_minibatch(
    sets: Sequence[SetSample | SetView],
    persons_per_batch: int = 3,
    sets_per_person: int = 2,
    items_per_set: int = 9,
    seed=0,
    groups: dict[int, list[int]] | None = None,
) -> MiniBatch:
    """``persons x sets`` sets, each a random ``items_per_set`` subsample."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    groups = group_by_label(sets) if groups is None else groups
    eligible = sorted(k for k, v in groups.items() if len(v) >= sets_per_person)
    if len(eligible) < persons_per_batch:
        raise ValueError(
            f"need {persons_per_batch} identities with >= {sets_per_person} sets, "
            f"found {len(eligible)}"
        )
    persons = rng.choice(eligible, size=persons_per_batch, replace=False)
    items, labels = [], []
    for p in persons:
        for si in rng.choice(groups[int(p)], size=sets_per_person, replace=False):
            full = sets[int(si)].items
            if len(full) < items_per_set:
                raise ValueError(f"set has {len(full)} items, need {items_per_set}")
            pick = rng.choice(len(full), size=items_per_set, replace=False)
            items.append(full[pick])
            labels.append(int(p))
    return MiniBatch(np.stack(items), np.array(labels))


# ----------------------------------------------------------------------------
# on-disk format


def save_benchmark(bench: Benchmark, directory: str | os.PathLike, config_hash: str = "") -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": BENCHMARK_FORMAT_VERSION,
        "config": bench.config.to_dict(),
        "config_hash": config_hash,
        "seed": bench.config.seed,
        "splits": {},
    }
    for split in bench.splits():
        np.savez(
            out / f"{split.name}.npz",
            labels=np.array([s.set_label for s in split.sets], dtype="<i8"),
            cameras=np.array([s.camera_id for s in split.sets], dtype="<i8"),
            items=np.stack([s.items for s in split.sets]).astype("<f8"),
        )
        np.savez(
            out / f"{split.name}.flags.npz",
            flags=np.stack([s.corruption_flags for s in split.sets]),
        )
        manifest["splits"][split.name] = {
            "scene_id": split.scene_id,
            "num_sets": len(split.sets),
            "identities": sorted(split.identities()),
        }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def load_benchmark(directory: str | os.PathLike, with_flags: bool = True) -> Benchmark:
    src = Path(directory)
    manifest_path = src / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no benchmark manifest at {manifest_path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != BENCHMARK_FORMAT_VERSION:
        raise ValueError(f"unsupported benchmark format {manifest.get('format_version')}")
    cfg = BenchmarkConfig.from_dict(manifest["config"])
    splits = {}
    for name, meta in manifest["splits"].items():
        with np.load(src / f"{name}.npz") as d:
            labels, cameras, items = d["labels"], d["cameras"], d["items"]
        if with_flags:
            with np.load(src / f"{name}.flags.npz") as d:
                flags = d["flags"]
        else:
            flags = np.zeros(items.shape[:2], dtype=bool)
        sets = [
            SetSample(items[i], int(labels[i]), flags[i], int(cameras[i]))
            for i in range(len(labels))
        ]
        splits[name] = Split(name, sets, int(meta["scene_id"]))
    bench = Benchmark(cfg, splits["train"], splits["test"], splits.get("cross_test"))
    check_disjoint(bench)
    return bench
