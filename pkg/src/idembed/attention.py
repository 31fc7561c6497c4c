"""ID-aware quality and the two confidence-driven attention weightings.

Quality of an item is its softmax confidence for the set's identity. Two
Gaussian bumps over that confidence give the item weights:

* learning attention, peaked at 0.5, weights the per-item classification loss;
* fusion attention, peaked at 1.0, weights items when pooling a set embedding.

Weights are plain numpy arrays. They never enter the autodiff graph as
differentiable nodes, so back-propagation treats them as constants.
"""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass
from typing import IO

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Node

log = logging.getLogger(__name__)

FUSION_MODES = ("average", "ffa", "ffa_mh")
DENOMINATORS = ("sigma_sq", "two_sigma_sq")
WEIGHT_EPS = 1e-12


class DegenerateWeightsError(ValueError):
    """All fusion weights of a set are (numerically) zero."""


# process-wide count of fusions that fell back to the plain mean
fallback_count = 0


@dataclass(frozen=True)
class AttentionConfig:
    sigma_fla: float = 0.18
    sigma_ffa: float = 0.68
    fusion_mode: str = "ffa"
    gaussian_denominator: str = "sigma_sq"
    epsilon_fallback: bool = True

    def __post_init__(self):
        if not self.sigma_fla > 0 or not self.sigma_ffa > 0:
            raise ValueError("sigma values must be strictly positive")
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"fusion_mode must be one of {FUSION_MODES}")
        if self.gaussian_denominator not in DENOMINATORS:
            raise ValueError(f"gaussian_denominator must be one of {DENOMINATORS}")


@dataclass(frozen=True)
class QualityRecord:
    """Per-item confidence and derived weights; all are gradient-stopped copies."""

    s: np.ndarray
    fla: np.ndarray
    ffa: np.ndarray


def _gaussian(s, center: float, sigma: float, denominator: str = "sigma_sq") -> np.ndarray:
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if denominator not in DENOMINATORS:
        raise ValueError(f"unknown denominator {denominator!r}")
    s = np.asarray(s, dtype=np.float64)
    scale = sigma * sigma if denominator == "sigma_sq" else 2.0 * sigma * sigma
    return np.exp(-((s - center) ** 2) / scale)


def fla_score(s, sigma_fla: float = 0.18, denominator: str = "sigma_sq"):
    """Learning-attention weight, largest for medium-hard items (s = 0.5)."""
    return _gaussian(s, 0.5, sigma_fla, denominator)


def ffa_score(s, sigma_ffa: float = 0.68, denominator: str = "sigma_sq"):
    """Fusion-attention weight, largest for confidently classified items (s = 1)."""
    return _gaussian(s, 1.0, sigma_ffa, denominator)


def ffa_mh_score(s, sigma_ffa: float = 0.68, denominator: str = "sigma_sq"):
    """Fusion weight centred on medium-hard items instead of easy ones."""
    return _gaussian(s, 0.5, sigma_ffa, denominator)


def id_quality(logits, label) -> np.ndarray:
    """Softmax confidence of each row of ``logits`` for its ``label``.

    Accepts one logit vector with an integer label, or a (rows, C) matrix
    with one label per row.
    """
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    z2 = z[None, :] if single else z
    labels = np.atleast_1d(np.asarray(label, dtype=np.intp))
    if labels.shape != (z2.shape[0],):
        raise DimensionError(f"{labels.shape[0]} labels for {z2.shape[0]} logit rows")
    c = z2.shape[1]
    if np.any(labels < 0) or np.any(labels >= c):
        raise IndexError(f"label out of range for {c} identities")
    probs = ad.softmax(ad.constant(z2)).value
    s = probs[np.arange(z2.shape[0]), labels]
    return s[0] if single else s


def fusion_weights(s, config: AttentionConfig, mode: str | None = None) -> np.ndarray:
    mode = config.fusion_mode if mode is None else mode
    if mode == "average":
        return np.ones_like(np.asarray(s, dtype=np.float64))
    if mode == "ffa":
        return ffa_score(s, config.sigma_ffa, config.gaussian_denominator)
    if mode == "ffa_mh":
        return ffa_mh_score(s, config.sigma_ffa, config.gaussian_denominator)
    raise ValueError(f"unknown fusion mode {mode!r}")


def quality_record(s, config: AttentionConfig) -> QualityRecord:
    s = np.array(s, dtype=np.float64)
    return QualityRecord(
        s=s,
        fla=fla_score(s, config.sigma_fla, config.gaussian_denominator),
        ffa=fusion_weights(s, config),
    )


def _guard_weights(w: np.ndarray, fallback: bool) -> np.ndarray:
    global fallback_count
    if np.any(w < 0):
        raise ValueError("fusion weights must be non-negative")
    totals = w.sum(axis=-1)
    bad = totals < WEIGHT_EPS
    if not np.any(bad):
        return w
    if not fallback:
        raise DegenerateWeightsError("all fusion weights below epsilon")
    fallback_count += int(np.sum(bad))
    warnings.warn("degenerate fusion weights, using average fusion", RuntimeWarning, stacklevel=3)
    w = w.copy()
    w[bad] = 1.0
    return w


def fuse_set(embeddings, weights, fallback: bool = True) -> np.ndarray:
    """Weighted mean ``sum(w_i z_i) / sum(w_i)`` of one set of embeddings."""
    z = np.asarray(embeddings, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] == 0:
        raise DimensionError("fuse_set needs a non-empty (n, d) array of embeddings")
    if w.shape != (z.shape[0],):
        raise DimensionError(f"{w.shape} weights for {z.shape[0]} embeddings")
    w = _guard_weights(w, fallback)
    if z.shape[0] == 1:
        return z[0].copy()
    return (w[:, None] * z).sum(axis=0) / w.sum()


def fuse_nodes(z: Node, weights, fallback: bool = True) -> Node:
    """Differentiable weighted fusion of (m*n, d) embeddings into (m, d).

    ``weights`` has shape (m, n) and is treated as a constant.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2:
        raise DimensionError(f"weights must be (sets, items), got {w.shape}")
    m, n = w.shape
    if z.shape[0] != m * n:
        raise DimensionError(f"{z.shape[0]} embeddings for {m}x{n} weights")
    w = _guard_weights(w, fallback)
    zr = ad.reshape(z, (m, n, z.shape[1]))
    numer = ad.sum(ad.mul(zr, ad.constant(w[:, :, None])), axis=1)
    return ad.div(numer, ad.constant(w.sum(axis=1, keepdims=True)))


def average_nodes(z: Node, m: int, n: int) -> Node:
    """Unweighted per-set mean of (m*n, d) embeddings."""
    if z.shape[0] != m * n:
        raise DimensionError(f"{z.shape[0]} embeddings for {m}x{n} sets")
    return ad.mean(ad.reshape(z, (m, n, z.shape[1])), axis=1)


class AttentionLog:
    """CSV stream of per-item quality and weights: iteration, item, s, fla, ffa."""

    header = ("iteration", "item", "s", "fla", "ffa")

    def __init__(self, fh: IO[str], write_header: bool = True):
        self._writer = csv.writer(fh, lineterminator="\n")
        if write_header:
            self._writer.writerow(self.header)

    def write(self, iteration: int, record: QualityRecord) -> None:
        for i, (s, a, b) in enumerate(zip(record.s, record.fla, record.ffa)):
            self._writer.writerow((iteration, i, repr(float(s)), repr(float(a)), repr(float(b))))
