"""Classification and verification losses on autodiff nodes."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import combinations
from typing import IO, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Node

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class LossConfig:
    margin: float = 1.2
    loss_weights: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "loss_weights", tuple(float(w) for w in self.loss_weights))
        if not self.margin > 0:
            raise ValueError("margin must be positive")
        if len(self.loss_weights) != 2 or any(w < 0 for w in self.loss_weights):
            raise ValueError("loss_weights must be two non-negative numbers")


def _log_conf(s: Node) -> Node:
    if np.any(s.value < 0):
        raise ValueError("confidences must be non-negative")
    return ad.log(ad.clip_min(s, LOG_FLOOR))


def weighted_cross_entropy(s, weights) -> Node:
    """``-sum(w * log s) / sum(w)`` with ``w`` held constant.

    The gradient with respect to ``s_i`` is ``-(w_i / sum(w)) / s_i``.
    """
    s = ad.as_node(s)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != s.shape:
        raise DimensionError(f"{w.shape} weights for {s.shape} confidences")
    if np.any(w <= 0):
        raise ValueError("cross-entropy weights must be positive")
    total = ad.sum(ad.mul(ad.constant(w), _log_conf(s)))
    return ad.neg(ad.div(total, ad.constant(w.sum())))


def cross_entropy(s) -> Node:
    """Mean negative log-confidence (the unweighted loss)."""
    return ad.neg(ad.mean(_log_conf(ad.as_node(s))))


def contrastive_pair(phi_j, phi_k, same_id: bool, alpha: float = 1.2) -> Node:
    """Pull same-identity sets together, push others out past ``alpha``."""
    phi_j, phi_k = ad.as_node(phi_j), ad.as_node(phi_k)
    if phi_j.shape != phi_k.shape or phi_j.value.ndim != 1:
        raise DimensionError(f"contrastive_pair: {phi_j.shape} vs {phi_k.shape}")
    sq = ad.sum(ad.square(phi_j - phi_k))
    if same_id:
        return sq
    return ad.square(ad.relu(ad.sub(alpha, ad.sqrt(sq))))


def all_pairs(m: int) -> tuple[np.ndarray, np.ndarray]:
    pairs = np.array(list(combinations(range(m), 2)), dtype=np.intp).reshape(-1, 2)
    return pairs[:, 0], pairs[:, 1]


def pair_counts(labels: Sequence[int]) -> tuple[int, int]:
    """(positive, negative) counts over all unordered pairs."""
    labels = np.asarray(labels)
    j, k = all_pairs(len(labels))
    pos = int(np.sum(labels[j] == labels[k]))
    return pos, len(j) - pos


def batch_contrastive(phi, labels: Sequence[int], alpha: float = 1.2) -> Node:
    """Mean pair loss over all m(m-1)/2 unordered pairs of set embeddings."""
    phi = ad.as_node(phi)
    labels = np.asarray(labels)
    m = phi.shape[0]
    if phi.value.ndim != 2 or labels.shape != (m,):
        raise DimensionError(f"batch_contrastive: {phi.shape} embeddings, {labels.shape} labels")
    if m < 2:
        raise ValueError("batch_contrastive needs at least two sets")
    j, k = all_pairs(m)
    select = np.zeros((len(j), m))
    select[np.arange(len(j)), j] = 1.0
    select[np.arange(len(j)), k] = -1.0
    diff = ad.matmul(ad.constant(select), phi)
    sq = ad.sum(ad.square(diff), axis=1)
    same = (labels[j] == labels[k]).astype(np.float64)
    hinge = ad.square(ad.relu(ad.sub(alpha, ad.sqrt(sq))))
    per_pair = ad.add(ad.mul(ad.constant(same), sq), ad.mul(ad.constant(1.0 - same), hinge))
    return ad.mean(per_pair)


def joint_loss(wcel, cl, weights: tuple[float, float] = (1.0, 1.0)) -> Node:
    a, b = weights
    if a == 1.0 and b == 1.0:
        return ad.add(wcel, cl)
    return ad.add(ad.mul(float(a), wcel), ad.mul(float(b), cl))


class LossLog:
    header = ("iteration", "wcel", "cl", "total")

    def __init__(self, fh: IO[str], write_header: bool = True):
        self._writer = csv.writer(fh, lineterminator="\n")
        if write_header:
            self._writer.writerow(self.header)

    def write(self, iteration: int, wcel: float, cl: float, total: float) -> None:
        self._writer.writerow((iteration, repr(float(wcel)), repr(float(cl)), repr(float(total))))
