"""Experiment configuration: a strict INI file with one section per concern.

Every key has a default, so an empty file is a valid configuration. Unknown
sections or keys, duplicate keys and unparsable values are rejected with the
offending line number. ``dumps`` writes the canonical form (every section,
every key, fixed order); ``fingerprint`` hashes that form and stamps outputs.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import os
import re
from dataclasses import dataclass, field, fields

from .attention import AttentionConfig
from .data import BenchmarkConfig, CorruptionSpec, SceneSpec
from .losses import LossConfig
from .model import EmbedderConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration; the message names the file, line and key."""


@dataclass(frozen=True)
class WorldSection:
    num_train_ids: int = 60
    num_test_ids: int = 30
    sets_per_id: int = 4
    items_per_set: int = 40
    input_dim: int = 32
    cross_scene: bool = True
    cross_scene_shift: float = 0.2
    cross_scene_id: int = 1


@dataclass(frozen=True)
class CorruptionSection:
    perceptual_noise_sigma: float = 0.8
    outlier_rate: float = 0.2
    severity_low: float = 0.5
    severity_high: float = 1.5


@dataclass(frozen=True)
class SceneSection:
    identity_rank: int = 8
    nuisance_rank: int = 8
    item_nuisance_gain: float = 1.0
    set_nuisance_gain: float = 3.0
    prototype_scale: float = 1.3


@dataclass(frozen=True)
class ModelSection:
    hidden_dims: tuple = (64, 64)
    embed_dim: int = 16


@dataclass(frozen=True)
class AttentionSection:
    sigma_fla: float = 0.18
    sigma_ffa: float = 0.68
    gaussian_denominator: str = "sigma_sq"
    epsilon_fallback: bool = True


@dataclass(frozen=True)
class LossSection:
    margin: float = 1.2
    wcel_weight: float = 1.0
    cl_weight: float = 1.0


@dataclass(frozen=True)
class TrainingSection:
    learning_rate: float = 1e-3
    iterations: int = 4000
    ce_mode: str = "fla_weighted"
    fusion_mode: str = "ffa"
    persons_per_batch: int = 3
    sets_per_person: int = 2
    items_per_set: int = 9
    lr_decay: float = 0.0
    head_lr_mult: float = 50.0
    attention_log: bool = False


@dataclass(frozen=True)
class PretrainSection:
    """Initialisation from a network trained on disjoint auxiliary identities."""

    enabled: bool = True
    num_identities: int = 100
    sets_per_id: int = 4
    iterations: int = 3000
    learning_rate: float = 0.03


@dataclass(frozen=True)
class EvaluationSection:
    seeds: tuple = (0, 1, 2, 3, 4)
    cells: tuple = ("baseline", "fla", "ffa", "fla_ffa", "fla_ffa_mh")
    sigma_fla_grid: tuple = (0.12, 0.15, 0.18, 0.21, 0.24)
    sigma_ffa_grid: tuple = (0.62, 0.65, 0.68, 0.71, 0.74)


@dataclass(frozen=True)
class OutputSection:
    directory: str = "runs"


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    world: WorldSection = field(default_factory=WorldSection)
    corruption: CorruptionSection = field(default_factory=CorruptionSection)
    scene: SceneSection = field(default_factory=SceneSection)
    model: ModelSection = field(default_factory=ModelSection)
    attention: AttentionSection = field(default_factory=AttentionSection)
    loss: LossSection = field(default_factory=LossSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    output: OutputSection = field(default_factory=OutputSection)

    def replace(self, **changes) -> "ExperimentConfig":
        """Copy with changes; nested keys use ``section__key`` names."""
        top, nested = {}, {}
        for k, v in changes.items():
            if "__" in k:
                sec, key = k.split("__", 1)
                nested.setdefault(sec, {})[key] = v
            else:
                top[k] = v
        for sec, kv in nested.items():
            top[sec] = dataclasses.replace(getattr(self, sec), **kv)
        return dataclasses.replace(self, **top)

    # -- views consumed by the library ------------------------------------

    def benchmark_config(self, seed: int | None = None) -> BenchmarkConfig:
        w, c, s = self.world, self.corruption, self.scene
        return BenchmarkConfig(
            num_train_ids=w.num_train_ids,
            num_test_ids=w.num_test_ids,
            sets_per_id=w.sets_per_id,
            items_per_set=w.items_per_set,
            input_dim=w.input_dim,
            corruption=CorruptionSpec(
                perceptual_noise_sigma=c.perceptual_noise_sigma,
                outlier_rate=c.outlier_rate,
                severity_jitter=(c.severity_low, c.severity_high),
            ),
            scene=self.scene_spec(),
            cross_scene=w.cross_scene,
            cross_scene_shift=w.cross_scene_shift,
            cross_scene_id=w.cross_scene_id,
            seed=self.seed if seed is None else seed,
        )

    def scene_spec(self) -> SceneSpec:
        s = self.scene
        return SceneSpec(
            identity_rank=s.identity_rank,
            nuisance_rank=s.nuisance_rank,
            item_nuisance_gain=s.item_nuisance_gain,
            set_nuisance_gain=s.set_nuisance_gain,
            prototype_scale=s.prototype_scale,
        )

    def embedder_config(self, num_identities: int | None = None) -> EmbedderConfig:
        return EmbedderConfig(
            input_dim=self.world.input_dim,
            hidden_dims=tuple(self.model.hidden_dims),
            embed_dim=self.model.embed_dim,
            num_identities=self.world.num_train_ids if num_identities is None else num_identities,
        )

    def train_config(self, seed: int | None = None, **overrides) -> TrainConfig:
        t, a = self.training, self.attention
        kw = dict(
            learning_rate=t.learning_rate,
            iterations=t.iterations,
            attention=AttentionConfig(
                sigma_fla=a.sigma_fla,
                sigma_ffa=a.sigma_ffa,
                fusion_mode=t.fusion_mode,
                gaussian_denominator=a.gaussian_denominator,
                epsilon_fallback=a.epsilon_fallback,
            ),
            loss=LossConfig(self.loss.margin, (self.loss.wcel_weight, self.loss.cl_weight)),
            fusion_mode=t.fusion_mode,
            ce_mode=t.ce_mode,
            persons_per_batch=t.persons_per_batch,
            sets_per_person=t.sets_per_person,
            items_per_set=t.items_per_set,
            lr_decay=t.lr_decay,
            head_lr_mult=t.head_lr_mult,
            seed=self.seed if seed is None else seed,
        )
        kw.update(overrides)
        return TrainConfig(**kw)

    def validate(self) -> None:
        """Build every derived config once so range errors surface early."""
        self.benchmark_config()
        self.embedder_config()
        self.train_config()
        if not self.evaluation.seeds:
            raise ValueError("evaluation.seeds must not be empty")
        from .experiments import CELLS

        unknown = [c for c in self.evaluation.cells if c not in CELLS]
        if unknown:
            raise ValueError(f"unknown ablation cells {unknown}; choose from {sorted(CELLS)}")
        if self.pretrain.enabled and self.pretrain.num_identities < 2:
            raise ValueError("pretrain.num_identities must be >= 2")


_SECTIONS = [f.name for f in fields(ExperimentConfig) if f.name != "seed"]
_TOP = "experiment"  # section holding the top-level seed


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _parse_scalar(text: str, like):
    if isinstance(like, bool):
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    return text


def _parse_value(text: str, default):
    text = text.strip()
    if isinstance(default, tuple):
        parts = [p.strip() for p in text.split(",") if p.strip()]
        like = default[0] if default else ""
        # a float grid may be written with integer-looking entries
        return tuple(_parse_scalar(p, like) for p in parts)
    return _parse_scalar(text, default)


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    """Line number of every ``key = value`` entry, keyed by (section, key)."""
    out: dict[tuple[str, str], int] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", stripped)
        if m:
            section = m.group(1).strip()
            out.setdefault((section, ""), lineno)
            continue
        m = re.match(r"([^=:]+)[=:]", stripped)
        if m and section is not None:
            out.setdefault((section, m.group(1).strip().lower()), lineno)
    return out


def loads(text: str, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(
        interpolation=None, strict=True, empty_lines_in_values=False, default_section="\0defaults"
    )
    try:
        parser.read_string(text, source=source)
    except configparser.DuplicateOptionError as e:
        raise ConfigError(f"{source}:{e.lineno}: duplicate key {e.option!r} in [{e.section}]") from None
    except configparser.DuplicateSectionError as e:
        raise ConfigError(f"{source}:{e.lineno}: duplicate section [{e.section}]") from None
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError(f"{source}:{e.lineno}: key outside of any section") from None
    except configparser.ParsingError as e:
        lineno = e.errors[0][0] if e.errors else 0
        raise ConfigError(f"{source}:{lineno}: cannot parse line") from None

    lines = _key_lines(text)
    base = ExperimentConfig()
    top: dict = {}
    for sec in parser.sections():
        where = f"{source}:{lines.get((sec, ''), 0)}"
        if sec == _TOP:
            target = {"seed": base.seed}
        elif sec in _SECTIONS:
            target = dataclasses.asdict(getattr(base, sec))
        else:
            raise ConfigError(f"{where}: unknown section [{sec}]")
        values = {}
        for key, raw in parser.items(sec):
            at = f"{source}:{lines.get((sec, key), 0)}"
            if key not in target:
                raise ConfigError(f"{at}: unknown key {key!r} in [{sec}]")
            try:
                values[key] = _parse_value(raw, getattr(base, key) if sec == _TOP else getattr(getattr(base, sec), key))
            except ValueError as e:
                raise ConfigError(f"{at}: bad value for {sec}.{key}: {e}") from None
        if sec == _TOP:
            top.update(values)
        else:
            top[sec] = dataclasses.replace(getattr(base, sec), **values)
    cfg = dataclasses.replace(base, **top)
    try:
        cfg.validate()
    except ValueError as e:
        raise ConfigError(f"{source}: {e}") from None
    return cfg


def load(path: str | os.PathLike) -> ExperimentConfig:
    with open(path) as fh:
        return loads(fh.read(), source=str(path))


def dumps(cfg: ExperimentConfig) -> str:
    """Canonical text: every section and key in declaration order."""
    buf = io.StringIO()
    buf.write(f"[{_TOP}]\nseed = {cfg.seed}\n")
    for sec in _SECTIONS:
        buf.write(f"\n[{sec}]\n")
        for f in fields(getattr(cfg, sec)):
            buf.write(f"{f.name} = {_format(getattr(getattr(cfg, sec), f.name))}\n")
    return buf.getvalue()


def fingerprint(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(dumps(cfg).encode()).hexdigest()[:16]
