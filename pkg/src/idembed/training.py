"""Plain SGD training of the embedder with the joint objective.

One iteration: embed every item, score it against the identity head, read
off each item's confidence for its set label, derive the (constant) learning
and fusion weights, then sum the weighted classification loss and the set
contrastive loss, back-propagate and take an SGD step.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .attention import AttentionConfig, QualityRecord, AttentionLog, fuse_nodes, average_nodes
from .attention import fla_score, fusion_weights
from .data import MiniBatch, SetSample, SetView, group_by_label, sample_minibatch
from .losses import LossConfig, LossLog, batch_contrastive, cross_entropy, joint_loss
from .losses import weighted_cross_entropy
from .model import EmbedderConfig, embed_batch, init_params
from .params import ParamStore

log = logging.getLogger(__name__)

CE_MODES = ("standard", "fla_weighted")


class NumericalError(FloatingPointError):
    """Raised when the loss stops being finite; ``state`` holds a diagnostic dump."""

    def __init__(self, msg: str, state: dict):
        super().__init__(msg)
        self.state = state


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    iterations: int = 2000
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    fusion_mode: str = "ffa"
    ce_mode: str = "fla_weighted"
    persons_per_batch: int = 3
    sets_per_person: int = 2
    items_per_set: int = 9
    lr_decay: float = 0.0  # lr_t = lr / (1 + decay * t); 0 keeps it constant
    head_lr_mult: float = 1.0  # learning-rate multiplier for the classifier head
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.ce_mode not in CE_MODES:
            raise ValueError(f"ce_mode must be one of {CE_MODES}")
        if self.fusion_mode not in ("average", "ffa", "ffa_mh"):
            raise ValueError("fusion_mode must be average, ffa or ffa_mh")
        if self.lr_decay < 0:
            raise ValueError("lr_decay must be >= 0")
        if self.head_lr_mult < 0:
            raise ValueError("head_lr_mult must be >= 0")

    @property
    def uses_attention(self) -> bool:
        return self.ce_mode != "standard" or self.fusion_mode != "average"


@dataclass
class LossParts:
    total: ad.Node
    wcel: ad.Node
    cl: ad.Node
    quality: QualityRecord | None


def ide_loss(
    params: ParamStore,
    batch: MiniBatch,
    config: TrainConfig,
    frozen: QualityRecord | None = None,
) -> LossParts:
    """Build the joint loss graph for one batch.

    ``frozen`` supplies precomputed attention weights instead of deriving them
    from this forward pass; finite-difference checks use it to hold the
    weights fixed while parameters move.
    """
    m, n = batch.num_sets, batch.items_per_set
    fwd = embed_batch(params, batch.items)
    labels = np.repeat(batch.labels, n)
    s = ad.gather_rows(ad.softmax(fwd.logits), labels)

    record = None
    if config.uses_attention:
        if frozen is not None:
            record = frozen
        else:
            att = AttentionConfig(
                sigma_fla=config.attention.sigma_fla,
                sigma_ffa=config.attention.sigma_ffa,
                fusion_mode=config.fusion_mode,
                gaussian_denominator=config.attention.gaussian_denominator,
                epsilon_fallback=config.attention.epsilon_fallback,
            )
            conf = ad.stop_gradient(s).value
            record = QualityRecord(
                s=conf,
                fla=fla_score(conf, att.sigma_fla, att.gaussian_denominator),
                ffa=fusion_weights(conf, att),
            )

    if config.ce_mode == "fla_weighted":
        wcel = weighted_cross_entropy(s, record.fla)
    else:
        wcel = cross_entropy(s)

    if config.fusion_mode == "average":
        phi = average_nodes(fwd.embeddings, m, n)
    else:
        phi = fuse_nodes(
            fwd.embeddings, record.ffa.reshape(m, n), fallback=config.attention.epsilon_fallback
        )
    cl = batch_contrastive(phi, batch.labels, config.loss.margin)
    total = joint_loss(wcel, cl, config.loss.loss_weights)
    return LossParts(total, wcel, cl, record)


@dataclass
class StepResult:
    wcel: float
    cl: float
    total: float
    quality: QualityRecord | None


def sgd_update(params: ParamStore, lr: float, head_lr_mult: float = 1.0) -> None:
    if lr == 0:
        return
    for name, node in params.items():
        step = lr * head_lr_mult if name == "head" else lr
        node.value -= step * node.grad


def train_step(
    batch: MiniBatch, params: ParamStore, config: TrainConfig, lr: float | None = None
) -> StepResult:
    """One forward/backward pass and an in-place SGD update of ``params``."""
    params.zero_grad()
    parts = ide_loss(params, batch, config)
    total = float(parts.total.value)
    if not np.isfinite(total):
        raise NumericalError(
            f"non-finite loss {total}",
            {
                "wcel": float(parts.wcel.value),
                "cl": float(parts.cl.value),
                "labels": batch.labels.tolist(),
                "param_norms": {k: float(np.linalg.norm(v.value)) for k, v in params.items()},
            },
        )
    ad.backward(parts.total)
    sgd_update(params, config.learning_rate if lr is None else lr, config.head_lr_mult)
    return StepResult(float(parts.wcel.value), float(parts.cl.value), total, parts.quality)


def train(
    sets: Sequence[SetSample | SetView],
    model_config: EmbedderConfig,
    config: TrainConfig,
    params: ParamStore | None = None,
    start_iteration: int = 0,
    loss_log: LossLog | None = None,
    attention_log: AttentionLog | None = None,
    history: list | None = None,
) -> ParamStore:
    """Run ``config.iterations`` SGD steps on batches drawn from ``sets``.

    Identity labels are remapped to ``0..C-1`` for the classification head in
    sorted order. Batch sampling for iteration ``t`` is seeded by
    ``(seed, t)``, so a resumed run draws the same batches as an
    uninterrupted one.
    """
    views = [s.view() if isinstance(s, SetSample) else s for s in sets]
    label_ids = sorted({int(v.set_label) for v in views})
    if len(label_ids) != model_config.num_identities:
        raise ValueError(
            f"{len(label_ids)} training identities but head has {model_config.num_identities}"
        )
    remap = {lab: i for i, lab in enumerate(label_ids)}
    views = [SetView(v.items, remap[int(v.set_label)], v.camera_id) for v in views]
    groups = group_by_label(views)
    if params is None:
        params = init_params(model_config, config.seed)
    for t in range(start_iteration, start_iteration + config.iterations):
        batch = sample_minibatch(
            views,
            config.persons_per_batch,
            config.sets_per_person,
            config.items_per_set,
            seed=[config.seed, 7, t],
            groups=groups,
        )
        lr = config.learning_rate / (1.0 + config.lr_decay * t)
        res = train_step(batch, params, config, lr)
        if loss_log is not None:
            loss_log.write(t, res.wcel, res.cl, res.total)
        if attention_log is not None and res.quality is not None:
            attention_log.write(t, res.quality)
        if history is not None:
            history.append(res.total)
        params.iteration = t + 1
    return params
